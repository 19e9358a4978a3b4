//! CSV and JSON outputs of evaluations, and prediction files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{AgentId, Point};
use crate::error::{Error, Result};
use crate::model::PredictionSet;

use super::experiment::LooReport;
use super::{GroundTruth, MetricReport, SampleMetrics};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// Row layout of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub variant: String,
    pub k: usize,
    pub ade_ml: f64,
    pub fde_ml: f64,
    pub ade_bk: f64,
    pub fde_bk: f64,
    pub n_samples: usize,
}

impl From<&MetricReport> for MetricRow {
    fn from(r: &MetricReport) -> Self {
        Self {
            dataset: r.dataset.clone(),
            variant: r.variant.clone(),
            k: r.k,
            ade_ml: r.ade_most_likely,
            fde_ml: r.fde_most_likely,
            ade_bk: r.ade_best_of_k,
            fde_bk: r.fde_best_of_k,
            n_samples: r.sample_count,
        }
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 2,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_metrics_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    write_rows(path, reports.iter().map(MetricRow::from))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    read_rows(path)
}

pub fn write_metrics_json(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let rows: Vec<MetricRow> = reports.iter().map(MetricRow::from).collect();
    let text = serde_json::to_string_pretty(&rows).expect("metric rows serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_sample_csv(path: &Path, rows: &[SampleMetrics]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_sample_csv(path: &Path) -> Result<Vec<SampleMetrics>> {
    read_rows(path)
}

/// One predicted position in a predictions CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dataset: String,
    pub agent_id: u64,
    pub start_frame: i64,
    pub sample: usize,
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub most_likely: bool,
}

pub fn write_predictions_csv(path: &Path, truths: &[GroundTruth], sets: &[PredictionSet]) -> Result<()> {
    if truths.len() != sets.len() {
        return Err(Error::Shape("one prediction set per window required".into()));
    }
    let rows = truths.iter().zip(sets).flat_map(|(gt, set)| {
        set.trajectories.iter().enumerate().flat_map(move |(n, traj)| {
            traj.iter().enumerate().map(move |(t, p)| PredictionRecord {
                dataset: gt.dataset.clone(),
                agent_id: gt.agent_id.0,
                start_frame: gt.start_frame,
                sample: n,
                step: t,
                x: p[0],
                y: p[1],
                score: set.scores[n],
                most_likely: n == set.most_likely_index,
            })
        })
    });
    write_rows(path, rows)
}

/// Key identifying a window: dataset, agent and first frame.
pub type WindowKey = (String, AgentId, i64);

/// Reads a predictions CSV and re-ranks every window's trajectories.
pub fn read_predictions_csv(path: &Path) -> Result<BTreeMap<WindowKey, PredictionSet>> {
    let rows: Vec<PredictionRecord> = read_rows(path)?;
    let mut grouped: BTreeMap<WindowKey, BTreeMap<usize, BTreeMap<usize, Point>>> = BTreeMap::new();
    for r in rows {
        let key = (r.dataset, AgentId(r.agent_id), r.start_frame);
        let slot = grouped.entry(key.clone()).or_default().entry(r.sample).or_default();
        if slot.insert(r.step, [r.x, r.y]).is_some() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 0,
                msg: format!("duplicate step {} of sample {} for {key:?}", r.step, r.sample),
            });
        }
    }
    grouped
        .into_iter()
        .map(|(key, samples)| {
            let trajectories: Vec<Vec<Point>> = samples
                .into_values()
                .map(|steps| {
                    let n = steps.len();
                    if steps.keys().copied().ne(0..n) {
                        return Err(Error::Parse {
                            path: path.display().to_string(),
                            line: 0,
                            msg: format!("non-contiguous steps for {key:?}"),
                        });
                    }
                    Ok(steps.into_values().collect())
                })
                .collect::<Result<_>>()?;
            Ok((key, PredictionSet::ranked(trajectories)?))
        })
        .collect()
}

/// Row layout of the leave-one-out CSV and JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRow {
    pub rate: f64,
    pub finetune_samples: usize,
    pub finetune_steps: usize,
    pub dataset: String,
    pub variant: String,
    pub k: usize,
    pub ade_ml: f64,
    pub fde_ml: f64,
    pub ade_bk: f64,
    pub fde_bk: f64,
    pub n_samples: usize,
}

impl From<&LooReport> for LooRow {
    fn from(r: &LooReport) -> Self {
        let m = MetricRow::from(&r.report);
        Self {
            rate: r.rate,
            finetune_samples: r.finetune_samples,
            finetune_steps: r.finetune_steps,
            dataset: m.dataset,
            variant: m.variant,
            k: m.k,
            ade_ml: m.ade_ml,
            fde_ml: m.fde_ml,
            ade_bk: m.ade_bk,
            fde_bk: m.fde_bk,
            n_samples: m.n_samples,
        }
    }
}

pub fn write_loo_csv(path: &Path, reports: &[LooReport]) -> Result<()> {
    write_rows(path, reports.iter().map(LooRow::from))
}

pub fn write_loo_json(path: &Path, reports: &[LooReport]) -> Result<()> {
    let rows: Vec<LooRow> = reports.iter().map(LooRow::from).collect();
    let text = serde_json::to_string_pretty(&rows).expect("rows serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
