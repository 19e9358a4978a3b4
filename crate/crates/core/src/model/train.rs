//! Mini-batch training with Adam on the variational loss.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::Point;
use crate::error::{Error, Result};
use crate::nn::{Adam, Mat, Tape};

use super::batch::{Batch, ModelSample};
use super::network::Mcenet;

/// Mean losses over one epoch. `mse` is measured in standardized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mse: f64,
    pub kl: f64,
    pub total: f64,
}

/// Seed offset separating the shuffle/noise stream from initialization.
const TRAIN_STREAM: u64 = 0x5EED_7A11;

/// KL weight at iteration `iter` (0-based) of `total` under a linear warm-up.
pub fn kl_weight_at(kl_weight: f64, warmup_fraction: f64, iter: usize, total: usize) -> f64 {
    let ramp = (warmup_fraction * total as f64).ceil() as usize;
    if ramp == 0 {
        kl_weight
    } else {
        kl_weight * ((iter + 1) as f64 / ramp as f64).min(1.0)
    }
}

/// Step size at iteration `iter` (0-based) of `total`.
pub fn learning_rate_at(start: f64, end: Option<f64>, iter: usize, total: usize) -> f64 {
    match end {
        Some(end) if total > 1 => {
            let frac = iter as f64 / (total - 1) as f64;
            end + 0.5 * (start - end) * (1.0 + (std::f64::consts::PI * frac).cos())
        }
        _ => start,
    }
}

fn rotate(p: Point, (sin, cos): (f64, f64)) -> Point {
    [cos * p[0] - sin * p[1], sin * p[0] + cos * p[1]]
}

/// `sample` with its trajectory rotated about the origin by `angle`.
/// Heading-relative occupancy grids are unaffected by the rotation.
pub fn rotated_sample(sample: &ModelSample, angle: f64) -> ModelSample {
    let sc = angle.sin_cos();
    let mut out = sample.clone();
    let w = &mut out.window;
    for p in w
        .obs_positions
        .iter_mut()
        .chain(&mut w.fut_positions)
        .chain(&mut w.obs_offsets)
        .chain(&mut w.fut_offsets)
    {
        *p = rotate(*p, sc);
    }
    out
}

/// One optimization step on `samples`; returns `(mse, kl, total)`.
pub fn train_step(
    model: &mut Mcenet,
    adam: &mut Adam,
    samples: &[&ModelSample],
    rng: &mut ChaCha8Rng,
    kl_weight: f64,
) -> Result<(f64, f64, f64)> {
    let batch = Batch::build(samples, &model.config, &model.branches, &model.standardizer)?;
    let eps = Mat::from_shape_simple_fn((batch.size, model.config.latent_dim), || StandardNormal.sample(rng));
    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let pass = model.forward(&mut tape, &p, &batch, &eps, kl_weight);
    let (mse, kl, total) = (tape.scalar(pass.mse), tape.scalar(pass.kl), tape.scalar(pass.loss));
    if !total.is_finite() {
        return Ok((mse, kl, total));
    }
    let mut grads = tape.backward(pass.loss);
    let per_param: Vec<Option<Mat>> = p.vars().iter().map(|&v| grads.take(v)).collect();
    adam.update(&mut model.params, &per_param);
    Ok((mse, kl, total))
}

/// Trains for `model.config.epochs` epochs and returns per-epoch means.
pub fn train(model: &mut Mcenet, samples: &[ModelSample]) -> Result<Vec<EpochLoss>> {
    train_with(model, samples, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    model: &mut Mcenet,
    samples: &[ModelSample],
    on_epoch: impl FnMut(&EpochLoss),
) -> Result<Vec<EpochLoss>> {
    let epochs = model.config.epochs;
    run_epochs(model, samples, epochs, on_epoch)
}

/// Continues training an already trained model for `epochs` epochs with a
/// fresh optimizer state.
pub fn fine_tune(model: &mut Mcenet, samples: &[ModelSample], epochs: usize) -> Result<Vec<EpochLoss>> {
    run_epochs(model, samples, epochs, |_| {})
}

fn run_epochs(
    model: &mut Mcenet,
    samples: &[ModelSample],
    epochs: usize,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<Vec<EpochLoss>> {
    if samples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if model.config.augment_rotation && model.branches.scene.is_some() {
        return Err(Error::Config(
            "model.augment_rotation cannot be combined with scene context".into(),
        ));
    }
    let mut cfg = model.config.clone();
    cfg.epochs = epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_STREAM);
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let batches_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total_iters = batches_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let iter = (epoch - 1) * batches_per_epoch + b;
            adam.learning_rate = learning_rate_at(cfg.learning_rate, cfg.final_learning_rate, iter, total_iters);
            let w = kl_weight_at(cfg.kl_weight, cfg.kl_warmup_fraction, iter, total_iters);
            let augmented: Vec<ModelSample>;
            let chunk: Vec<&ModelSample> = if cfg.augment_rotation {
                augmented = idx
                    .iter()
                    .map(|&i| rotated_sample(&samples[i], rng.random_range(0.0..std::f64::consts::TAU)))
                    .collect();
                augmented.iter().collect()
            } else {
                idx.iter().map(|&i| &samples[i]).collect()
            };
            let (mse, kl, total) = train_step(model, &mut adam, &chunk, &mut rng, w)?;
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, mse, kl });
            }
            sums[0] += mse;
            sums[1] += kl;
            sums[2] += total;
        }
        let n = batches_per_epoch as f64;
        let loss = EpochLoss {
            epoch,
            mse: sums[0] / n,
            kl: sums[1] / n,
            total: sums[2] / n,
        };
        log::info!(
            "epoch {epoch}/{}: mse {:.5} kl {:.5} total {:.5}",
            cfg.epochs,
            loss.mse,
            loss.kl,
            loss.total
        );
        on_epoch(&loss);
        history.push(loss);
    }
    Ok(history)
}

/// Writes the loss history as `epoch,mse,kl,total`.
pub fn write_loss_log(path: &Path, history: &[EpochLoss]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("epoch,mse,kl,total\n");
    for l in history {
        text.push_str(&format!("{},{},{},{}\n", l.epoch, l.mse, l.kl, l.total));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
