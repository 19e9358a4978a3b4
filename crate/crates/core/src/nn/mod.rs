//! Minimal neural-network toolkit: an autodiff tape, parameter storage with
//! seeded initialization, the layers used by the model, and Adam.

pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use layers::{Conv2dLayer, Linear, Lstm};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use tape::{ConvGeom, Grads, Mat, Tape, Var};
