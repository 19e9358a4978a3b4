//! Multi-path trajectory prediction for heterogeneous road agents.
//!
//! A dual-encoder conditional variational model consumes agent motion,
//! grouping-aware polar occupancy and scene rasters, samples several
//! plausible futures, ranks them by per-step bivariate Gaussian likelihood
//! and scores them with ADE/FDE.

pub mod context;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod nn;
pub mod ranking;
pub mod synthetic;
pub mod variant;

pub use error::{Error, Result};
pub use variant::Variant;
