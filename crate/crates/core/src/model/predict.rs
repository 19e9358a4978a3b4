//! Single-sample encoders and N-sample inference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{offsets_to_positions, Point};
use crate::error::{Error, Result};
use crate::nn::{Mat, Tape};
use crate::ranking::rank_predictions;

use super::batch::{Batch, ModelSample};
use super::latent::LatentParams;
use super::network::Mcenet;

/// Output of one encoder for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedContext {
    pub phi: Vec<f64>,
}

/// `N` sampled futures for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    /// `trajectories[n][t]`: predicted position in meters.
    pub trajectories: Vec<Vec<Point>>,
    /// Ranking score per trajectory (summed per-step log-density).
    pub scores: Vec<f64>,
    pub most_likely_index: usize,
}

impl PredictionSet {
    /// Builds a set with ranking scores filled in. A single trajectory gets
    /// score 0 and is trivially the most likely one.
    pub fn ranked(trajectories: Vec<Vec<Point>>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::invalid("prediction set needs at least one trajectory"));
        }
        if trajectories.len() == 1 {
            return Ok(Self {
                trajectories,
                scores: vec![0.0],
                most_likely_index: 0,
            });
        }
        let mut set = Self {
            trajectories,
            scores: Vec::new(),
            most_likely_index: 0,
        };
        let ranked = rank_predictions(&set)?;
        set.most_likely_index = ranked.best_index();
        set.scores = ranked.scores;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn most_likely(&self) -> &[Point] {
        &self.trajectories[self.most_likely_index]
    }
}

/// Seed used for the `i`-th sample of a `predict_many` call.
pub fn sample_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn row_vec(m: &Mat, r: usize) -> Vec<f64> {
    m.row(r).to_vec()
}

const PREDICT_CHUNK: usize = 64;

impl Mcenet {
    fn single_batch(&self, sample: &ModelSample, with_future: bool) -> Result<Batch> {
        let s = [sample];
        if with_future {
            Batch::build(&s, &self.config, &self.branches, &self.standardizer)
        } else {
            Batch::build_past(&s, &self.config, &self.branches, &self.standardizer)
        }
    }

    /// `Phi_X` for one observed window.
    pub fn encode_past(&self, sample: &ModelSample) -> Result<EncodedContext> {
        let batch = self.single_batch(sample, false)?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let inputs = self.place_past(&mut tape, &batch);
        let phi = self.encode_x(&mut tape, &p, &inputs);
        Ok(EncodedContext {
            phi: row_vec(tape.value(phi), 0),
        })
    }

    /// `Phi_Y` for one future window; only meaningful during training.
    pub fn encode_future(&self, sample: &ModelSample) -> Result<EncodedContext> {
        let batch = self.single_batch(sample, true)?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let inputs = self.place_future(&mut tape, &batch);
        let phi = self.encode_y(&mut tape, &p, &inputs);
        Ok(EncodedContext {
            phi: row_vec(tape.value(phi), 0),
        })
    }

    fn check_phi(&self, phi: &EncodedContext) -> Result<Mat> {
        if phi.phi.len() != self.config.fusion_dim {
            return Err(Error::Shape(format!(
                "encoding has {} entries, expected {}",
                phi.phi.len(),
                self.config.fusion_dim
            )));
        }
        Ok(Mat::from_shape_vec((1, phi.phi.len()), phi.phi.clone()).expect("row vector"))
    }

    /// Posterior parameters from both encodings.
    pub fn latent_params(&self, phi_x: &EncodedContext, phi_y: &EncodedContext) -> Result<LatentParams> {
        let (x, y) = (self.check_phi(phi_x)?, self.check_phi(phi_y)?);
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let (x, y) = (tape.leaf(x), tape.leaf(y));
        let (mu, lv) = self.latent(&mut tape, &p, x, y);
        Ok(LatentParams {
            mu: row_vec(tape.value(mu), 0),
            log_var: row_vec(tape.value(lv), 0),
        })
    }

    /// Decodes `(phi_x, z)` into `T'` offsets in meters.
    pub fn decode_offsets(&self, phi_x: &EncodedContext, z: &[f64]) -> Result<Vec<Point>> {
        let x = self.check_phi(phi_x)?;
        if z.len() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "latent vector has {} entries, expected {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let x = tape.leaf(x);
        let z = tape.leaf(Mat::from_shape_vec((1, z.len()), z.to_vec()).expect("row vector"));
        let out = self.decode(&mut tape, &p, x, z);
        Ok(self.destandardize(tape.value(out), 0))
    }

    fn destandardize(&self, out: &Mat, row: usize) -> Vec<Point> {
        (0..self.config.pred_len)
            .map(|t| self.standardizer.inverse([out[[row, 2 * t]], out[[row, 2 * t + 1]]]))
            .collect()
    }

    /// Draws `n` futures from the standard-normal prior and ranks them.
    pub fn predict(&self, sample: &ModelSample, n: usize, seed: u64) -> Result<PredictionSet> {
        let mut sets = self.predict_many(std::slice::from_ref(sample), n, seed)?;
        Ok(sets.pop().expect("one sample in, one set out"))
    }

    /// Predicts every sample; sample `i` uses `sample_seed(seed, i)`, so the
    /// first result equals `predict(samples[0], n, seed)`.
    pub fn predict_many(&self, samples: &[ModelSample], n: usize, seed: u64) -> Result<Vec<PredictionSet>> {
        if n == 0 {
            return Err(Error::invalid("number of samples must be >= 1"));
        }
        let latent = self.config.latent_dim;
        let mut out = Vec::with_capacity(samples.len());
        for (chunk_no, chunk) in samples.chunks(PREDICT_CHUNK).enumerate() {
            let refs: Vec<&ModelSample> = chunk.iter().collect();
            let batch = Batch::build_past(&refs, &self.config, &self.branches, &self.standardizer)?;
            let mut tape = Tape::new();
            let p = self.bind(&mut tape);
            let inputs = self.place_past(&mut tape, &batch);
            let phi = self.encode_x(&mut tape, &p, &inputs);
            let rows: Vec<usize> = (0..chunk.len()).flat_map(|b| std::iter::repeat_n(b, n)).collect();
            let phi_rep = tape.gather_rows(phi, &rows);
            let mut eps = Mat::zeros((chunk.len() * n, latent));
            for b in 0..chunk.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, chunk_no * PREDICT_CHUNK + b));
                for k in 0..n {
                    for d in 0..latent {
                        eps[[b * n + k, d]] = StandardNormal.sample(&mut rng);
                    }
                }
            }
            let z = tape.leaf(eps);
            let decoded = self.decode(&mut tape, &p, phi_rep, z);
            let values = tape.value(decoded);
            for (b, sample) in chunk.iter().enumerate() {
                let anchor = sample.window.last_observed();
                let trajectories = (0..n)
                    .map(|k| offsets_to_positions(anchor, &self.destandardize(values, b * n + k)))
                    .collect();
                out.push(PredictionSet::ranked(trajectories)?);
            }
        }
        Ok(out)
    }
}
