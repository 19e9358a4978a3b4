//! Displacement metrics, most-likely and best-of-k evaluation, ablation and
//! leave-one-out experiments.

pub mod experiment;
pub mod io;

use serde::{Deserialize, Serialize};

use crate::dataio::{AgentId, Point};
use crate::error::{Error, Result};
use crate::model::{Mcenet, ModelSample, PredictionSet};

pub use experiment::{
    leave_one_out, prepare_dataset, run_ablation, train_prepared, ExperimentConfig, LooReport, PreparedData,
    SourceDataset,
};

fn check_lengths(pred: &[Point], gt: &[Point]) -> Result<()> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "trajectories of length {} and {} cannot be compared",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Average displacement error in meters.
pub fn ade(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_lengths(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(&p, &g)| dist(p, g)).sum::<f64>() / pred.len() as f64)
}

/// Final displacement error in meters.
pub fn fde(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_lengths(pred, gt)?;
    Ok(dist(*pred.last().expect("non-empty"), *gt.last().expect("non-empty")))
}

/// Indices of the `k` highest-scoring trajectories, ties by lowest index.
pub fn top_k(set: &PredictionSet, k: usize) -> Result<Vec<usize>> {
    if k < 1 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if k > set.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} predictions", set.len())));
    }
    if set.scores.len() != set.len() {
        return Err(Error::invalid("prediction set has no ranking scores"));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Minimum ADE and, independently, minimum FDE over the top-`k` predictions.
pub fn best_of_k(set: &PredictionSet, gt: &[Point], k: usize) -> Result<(f64, f64)> {
    let mut best = (f64::INFINITY, f64::INFINITY);
    for i in top_k(set, k)? {
        let traj = &set.trajectories[i];
        best.0 = best.0.min(ade(traj, gt)?);
        best.1 = best.1.min(fde(traj, gt)?);
    }
    Ok(best)
}

/// Per-sample metrics as written to the per-sample CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub dataset: String,
    pub agent_id: u64,
    pub start_frame: i64,
    pub ade_ml: f64,
    pub fde_ml: f64,
    pub ade_bk: f64,
    pub fde_bk: f64,
}

/// Averages over a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub variant: String,
    pub k: usize,
    pub ade_most_likely: f64,
    pub fde_most_likely: f64,
    pub ade_best_of_k: f64,
    pub fde_best_of_k: f64,
    pub sample_count: usize,
}

/// Ground truth of one window, keyed like a prediction record.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub dataset: String,
    pub agent_id: AgentId,
    pub start_frame: i64,
    pub future: Vec<Point>,
}

impl GroundTruth {
    pub fn of(sample: &ModelSample) -> Self {
        Self {
            dataset: sample.dataset.clone(),
            agent_id: sample.window.agent_id,
            start_frame: sample.window.start_frame,
            future: sample.window.fut_positions.clone(),
        }
    }
}

/// Scores prediction sets against their ground truth.
pub fn score_predictions(
    dataset: &str,
    variant: &str,
    truths: &[GroundTruth],
    sets: &[PredictionSet],
    k: usize,
) -> Result<(MetricReport, Vec<SampleMetrics>)> {
    if truths.is_empty() {
        return Err(Error::invalid("evaluation needs at least one test sample"));
    }
    if truths.len() != sets.len() {
        return Err(Error::Shape(format!(
            "{} ground-truth windows but {} prediction sets",
            truths.len(),
            sets.len()
        )));
    }
    let rows = truths
        .iter()
        .zip(sets)
        .map(|(gt, set)| {
            let ml = set.most_likely();
            let (ade_bk, fde_bk) = best_of_k(set, &gt.future, k)?;
            Ok(SampleMetrics {
                dataset: gt.dataset.clone(),
                agent_id: gt.agent_id.0,
                start_frame: gt.start_frame,
                ade_ml: ade(ml, &gt.future)?,
                fde_ml: fde(ml, &gt.future)?,
                ade_bk,
                fde_bk,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((aggregate(dataset, variant, k, &rows), rows))
}

/// Means of per-sample rows.
pub fn aggregate(dataset: &str, variant: &str, k: usize, rows: &[SampleMetrics]) -> MetricReport {
    let n = rows.len() as f64;
    let mean = |f: fn(&SampleMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    MetricReport {
        dataset: dataset.to_string(),
        variant: variant.to_string(),
        k,
        ade_most_likely: mean(|r| r.ade_ml),
        fde_most_likely: mean(|r| r.fde_ml),
        ade_best_of_k: mean(|r| r.ade_bk),
        fde_best_of_k: mean(|r| r.fde_bk),
        sample_count: rows.len(),
    }
}

/// Predictions, metrics and per-sample rows of one evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub rows: Vec<SampleMetrics>,
    pub predictions: Vec<PredictionSet>,
}

/// Samples `num_samples` futures per test window and scores them.
pub fn evaluate(
    model: &Mcenet,
    test: &[ModelSample],
    dataset: &str,
    variant: &str,
    k: usize,
    num_samples: usize,
    seed: u64,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::invalid(format!("dataset {dataset} has no test windows")));
    }
    let predictions = model.predict_many(test, num_samples, seed)?;
    let truths: Vec<GroundTruth> = test.iter().map(GroundTruth::of).collect();
    let (report, rows) = score_predictions(dataset, variant, &truths, &predictions, k)?;
    Ok(Evaluation {
        report,
        rows,
        predictions,
    })
}
