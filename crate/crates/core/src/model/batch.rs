use std::sync::Arc;

use crate::context::{OccupancyGrid, SceneTensor};
use crate::dataio::{Point, TrainingSample};
use crate::error::{Error, Result};
use crate::nn::Mat;

use super::config::{Branches, ModelConfig, Standardizer};

/// A window together with the context features its variant needs.
#[derive(Debug, Clone)]
pub struct ModelSample {
    pub dataset: String,
    pub window: TrainingSample,
    pub past_occupancy: Option<OccupancyGrid>,
    pub future_occupancy: Option<OccupancyGrid>,
    pub past_scene: Option<Arc<SceneTensor>>,
    pub future_scene: Option<Arc<SceneTensor>>,
}

impl ModelSample {
    /// A sample without any context features.
    pub fn motion_only(dataset: impl Into<String>, window: TrainingSample) -> Self {
        Self {
            dataset: dataset.into(),
            window,
            past_occupancy: None,
            future_occupancy: None,
            past_scene: None,
            future_scene: None,
        }
    }
}

/// Scene images of a batch, deduplicated, with per-step row lookup.
#[derive(Debug, Clone)]
pub struct SceneBatch {
    /// One flattened `size x size x C` image per row.
    pub images: Mat,
    /// `index[t][b]`: image row used by batch item `b` at step `t`.
    pub index: Vec<Vec<usize>>,
}

/// Time-major model inputs for a set of samples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    /// `T - 1` matrices of `[B, 5]`: standardized offset and type one-hot.
    pub past_motion: Vec<Mat>,
    /// `T'` matrices of `[B, 5]`.
    pub future_motion: Vec<Mat>,
    /// Standardized future offsets, `[B, 2 T']`, step-major.
    pub target: Mat,
    /// `T` matrices of `[B, R * D]`; empty without the occupancy branch.
    pub past_occupancy: Vec<Mat>,
    pub future_occupancy: Vec<Mat>,
    pub past_scene: Option<SceneBatch>,
    pub future_scene: Option<SceneBatch>,
}

fn motion_steps(samples: &[&ModelSample], pick: impl Fn(&TrainingSample) -> &[Point], steps: usize, std: &Standardizer) -> Vec<Mat> {
    (0..steps)
        .map(|t| {
            Mat::from_shape_fn((samples.len(), 5), |(b, k)| {
                let w = &samples[b].window;
                match k {
                    0 | 1 => std.forward(pick(w)[t])[k],
                    _ => w.type_onehot[k - 2],
                }
            })
        })
        .collect()
}

fn occupancy_steps(
    samples: &[&ModelSample],
    pick: impl Fn(&ModelSample) -> Option<&OccupancyGrid>,
    steps: usize,
    cells: usize,
) -> Result<Vec<Mat>> {
    let grids = samples
        .iter()
        .map(|s| {
            let g = pick(s).ok_or_else(|| Error::Shape("sample lacks occupancy features".into()))?;
            if g.steps != steps || g.orientation_bins * g.distance_bins != cells {
                return Err(Error::Shape(format!(
                    "occupancy is {}x{} cells over {} steps, model expects {cells} cells over {steps}",
                    g.orientation_bins, g.distance_bins, g.steps
                )));
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..steps)
        .map(|t| Mat::from_shape_fn((samples.len(), cells), |(b, c)| grids[b].step(t)[c] as f64))
        .collect())
}

fn scene_batch(
    samples: &[&ModelSample],
    pick: impl Fn(&ModelSample) -> Option<&Arc<SceneTensor>>,
    steps: usize,
    size: usize,
    channels: usize,
) -> Result<SceneBatch> {
    let mut unique: Vec<(&Arc<SceneTensor>, usize)> = Vec::new();
    let mut rows = 0;
    let mut base = Vec::with_capacity(samples.len());
    for s in samples {
        let t = pick(s).ok_or_else(|| Error::Shape("sample lacks scene features".into()))?;
        if t.size != size || t.channels != channels {
            return Err(Error::Shape(format!(
                "scene tensor is {}x{}x{}, model expects {size}x{size}x{channels}",
                t.size, t.size, t.channels
            )));
        }
        if t.steps != 1 && t.steps != steps {
            return Err(Error::Shape(format!(
                "scene tensor has {} steps, expected 1 or {steps}",
                t.steps
            )));
        }
        let start = match unique.iter().find(|(u, _)| Arc::ptr_eq(u, t)) {
            Some(&(_, start)) => start,
            None => {
                unique.push((t, rows));
                rows += t.steps;
                rows - t.steps
            }
        };
        base.push((start, t.steps));
    }
    let len = size * size * channels;
    let mut images = Mat::zeros((rows, len));
    for (t, start) in &unique {
        for k in 0..t.steps {
            images
                .row_mut(start + k)
                .as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(t.image(k));
        }
    }
    let index = (0..steps)
        .map(|step| base.iter().map(|&(start, n)| start + step.min(n - 1)).collect())
        .collect();
    Ok(SceneBatch { images, index })
}

impl Batch {
    /// Builds past and future inputs plus the training target.
    pub fn build(
        samples: &[&ModelSample],
        config: &ModelConfig,
        branches: &Branches,
        standardizer: &Standardizer,
    ) -> Result<Batch> {
        Self::assemble(samples, config, branches, standardizer, true)
    }

    /// Builds only the observed-window inputs; future fields stay empty.
    pub fn build_past(
        samples: &[&ModelSample],
        config: &ModelConfig,
        branches: &Branches,
        standardizer: &Standardizer,
    ) -> Result<Batch> {
        Self::assemble(samples, config, branches, standardizer, false)
    }

    fn assemble(
        samples: &[&ModelSample],
        config: &ModelConfig,
        branches: &Branches,
        standardizer: &Standardizer,
        with_future: bool,
    ) -> Result<Batch> {
        if samples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let (t_obs, t_pred) = (config.obs_len, config.pred_len);
        for s in samples {
            let w = &s.window;
            if w.obs_offsets.len() != t_obs - 1 || (with_future && w.fut_offsets.len() != t_pred) {
                return Err(Error::Shape(format!(
                    "window has {}/{} offsets, model expects {}/{}",
                    w.obs_offsets.len(),
                    w.fut_offsets.len(),
                    t_obs - 1,
                    t_pred
                )));
            }
        }
        let past_motion = motion_steps(samples, |w| &w.obs_offsets, t_obs - 1, standardizer);
        let t_fut = if with_future { t_pred } else { 0 };
        let future_motion = motion_steps(samples, |w| &w.fut_offsets, t_fut, standardizer);
        let target = Mat::from_shape_fn((samples.len(), 2 * t_fut), |(b, k)| {
            standardizer.forward(samples[b].window.fut_offsets[k / 2])[k % 2]
        });
        let (past_occupancy, future_occupancy) = match branches.occupancy_cells {
            Some(cells) => (
                occupancy_steps(samples, |s| s.past_occupancy.as_ref(), t_obs, cells)?,
                if with_future {
                    occupancy_steps(samples, |s| s.future_occupancy.as_ref(), t_pred, cells)?
                } else {
                    Vec::new()
                },
            ),
            None => (Vec::new(), Vec::new()),
        };
        let (past_scene, future_scene) = match branches.scene {
            Some(shape) => (
                Some(scene_batch(samples, |s| s.past_scene.as_ref(), t_obs, shape.size, shape.channels)?),
                if with_future {
                    Some(scene_batch(samples, |s| s.future_scene.as_ref(), t_pred, shape.size, shape.channels)?)
                } else {
                    None
                },
            ),
            None => (None, None),
        };
        Ok(Batch {
            size: samples.len(),
            past_motion,
            future_motion,
            target,
            past_occupancy,
            future_occupancy,
            past_scene,
            future_scene,
        })
    }
}
