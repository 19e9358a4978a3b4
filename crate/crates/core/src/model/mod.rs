//! The variational trajectory network, its training loop and inference.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod latent;
pub mod network;
pub mod predict;
pub mod train;

pub use batch::{Batch, ModelSample, SceneBatch};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{Branches, ModelConfig, SceneShape, Standardizer};
pub use latent::{elbo_loss, kl_divergence, mse, reparameterize, LatentParams};
pub use network::{ForwardPass, Mcenet};
pub use predict::{sample_seed, EncodedContext, PredictionSet};
pub use train::{fine_tune, kl_weight_at, learning_rate_at, rotated_sample, train, train_with, write_loss_log, EpochLoss};
