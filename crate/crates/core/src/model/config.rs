use serde::{Deserialize, Serialize};

use crate::dataio::Point;
use crate::error::{Error, Result};

/// Network and training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Observed steps `T`.
    pub obs_len: usize,
    /// Predicted steps `T'`.
    pub pred_len: usize,
    pub conv1d_kernel: usize,
    /// Output channels of the temporal motion convolution.
    pub motion_channels: usize,
    pub cnn_kernel_sizes: [usize; 3],
    pub cnn_channels: [usize; 3],
    pub cnn_stride: usize,
    pub lstm_hidden: usize,
    pub latent_dim: usize,
    pub fusion_dim: usize,
    pub kl_weight: f64,
    /// Fraction of all iterations over which the KL weight ramps linearly
    /// from 0 to `kl_weight`; 0 disables the ramp.
    pub kl_warmup_fraction: f64,
    pub learning_rate: f64,
    /// When set, the step size follows a cosine curve from `learning_rate`
    /// down to this value over all iterations.
    pub final_learning_rate: Option<f64>,
    pub batch_size: usize,
    /// Rotate every training window by a random angle each time it is drawn.
    /// Only valid without scene context, whose rasters are not rotated.
    pub augment_rotation: bool,
    pub epochs: usize,
    /// Samples drawn per prediction (`N`).
    pub num_samples: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            obs_len: 8,
            pred_len: 8,
            conv1d_kernel: 8,
            motion_channels: 64,
            cnn_kernel_sizes: [8, 4, 4],
            cnn_channels: [32, 64, 128],
            cnn_stride: 2,
            lstm_hidden: 128,
            latent_dim: 16,
            fusion_dim: 128,
            kl_weight: 1.0,
            kl_warmup_fraction: 0.0,
            learning_rate: 0.001,
            final_learning_rate: None,
            batch_size: 64,
            augment_rotation: false,
            epochs: 50,
            num_samples: 10,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("obs_len", self.obs_len),
            ("pred_len", self.pred_len),
            ("conv1d_kernel", self.conv1d_kernel),
            ("motion_channels", self.motion_channels),
            ("cnn_stride", self.cnn_stride),
            ("lstm_hidden", self.lstm_hidden),
            ("latent_dim", self.latent_dim),
            ("fusion_dim", self.fusion_dim),
            ("batch_size", self.batch_size),
            ("num_samples", self.num_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.obs_len < 2 {
            return Err(Error::Config("model.obs_len must be >= 2".into()));
        }
        if self.cnn_kernel_sizes.contains(&0) || self.cnn_channels.contains(&0) {
            return Err(Error::Config("model.cnn_* entries must be positive".into()));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::Config("model.kl_weight must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.kl_warmup_fraction) {
            return Err(Error::Config("model.kl_warmup_fraction must lie in [0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("model.learning_rate must be > 0".into()));
        }
        if let Some(lr) = self.final_learning_rate {
            if !(lr > 0.0 && lr <= self.learning_rate) {
                return Err(Error::Config(
                    "model.final_learning_rate must lie in (0, learning_rate]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Features per motion step: a 2-D offset and the 3-way type one-hot.
    pub fn motion_features(&self) -> usize {
        5
    }
}

/// Shape of the scene input fed to the convolutional branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneShape {
    pub size: usize,
    pub channels: usize,
}

/// Which optional context branches exist in a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Branches {
    /// Occupancy cells per step (`R * D`), if the interaction branch is on.
    pub occupancy_cells: Option<usize>,
    pub scene: Option<SceneShape>,
}

/// Per-axis affine normalization of offsets at the model boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Point,
    pub std: Point,
}

impl Default for Standardizer {
    fn default() -> Self {
        Self {
            mean: [0.0, 0.0],
            std: [1.0, 1.0],
        }
    }
}

impl Standardizer {
    /// Fits mean and (population) standard deviation per axis.
    pub fn fit<'a>(offsets: impl IntoIterator<Item = &'a Point>) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for o in offsets {
            n += 1;
            for k in 0..2 {
                sum[k] += o[k];
                sq[k] += o[k] * o[k];
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mut mean = [0.0; 2];
        let mut std = [1.0; 2];
        for k in 0..2 {
            mean[k] = sum[k] / n as f64;
            let var = (sq[k] / n as f64 - mean[k] * mean[k]).max(0.0);
            // Degenerate axes stay unscaled.
            std[k] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn forward(&self, o: Point) -> Point {
        [(o[0] - self.mean[0]) / self.std[0], (o[1] - self.mean[1]) / self.std[1]]
    }

    pub fn inverse(&self, o: Point) -> Point {
        [o[0] * self.std[0] + self.mean[0], o[1] * self.std[1] + self.mean[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizer_round_trip() {
        let pts = [[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]];
        let s = Standardizer::fit(&pts);
        assert_eq!(s.mean, [2.0, 5.0]);
        assert_eq!(s.std[1], 1.0);
        let z = s.forward([3.0, 7.0]);
        let back = s.inverse(z);
        assert!((back[0] - 3.0).abs() < 1e-12 && (back[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn default_config_matches_reference_settings() {
        let c = ModelConfig::default();
        assert_eq!((c.obs_len, c.pred_len), (8, 8));
        assert_eq!(c.conv1d_kernel, 8);
        assert_eq!(c.cnn_kernel_sizes, [8, 4, 4]);
        assert_eq!(c.lstm_hidden, 128);
        assert_eq!(c.latent_dim, 16);
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.num_samples, 10);
        c.validate().unwrap();
        let bad = ModelConfig { latent_dim: 0, ..c };
        assert!(bad.validate().is_err());
    }
}
