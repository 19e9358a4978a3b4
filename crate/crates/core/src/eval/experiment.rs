//! Data preparation, training and evaluation wired together for ablation and
//! leave-one-out runs.

use serde::{Deserialize, Serialize};

use crate::context::SceneRaster;
use crate::dataio::{chronological_split, fraction_boundary, make_windows, DatasetManifest, SceneDataset};
use crate::error::{Error, Result};
use crate::features::{branches_for, prepare_samples, scene_raster, FeatureConfig};
use crate::model::{fine_tune, train, Branches, EpochLoss, Mcenet, ModelConfig, ModelSample, Standardizer};
use crate::variant::Variant;

use super::{evaluate, MetricReport};

/// Everything an experiment needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub features: FeatureConfig,
    /// Leading share of the timeline held out for testing.
    pub test_fraction: f64,
    /// Window stride in steps.
    pub stride: usize,
    /// Candidates considered by best-of-k.
    pub k: usize,
    /// Epochs of fine-tuning in leave-one-out runs.
    pub finetune_epochs: usize,
    /// Run independent trainings on separate threads.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            features: FeatureConfig::default(),
            test_fraction: 0.3,
            stride: 1,
            k: 10,
            finetune_epochs: 10,
            parallel: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.features.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if self.k == 0 || self.k > self.model.num_samples {
            return Err(Error::Config(format!(
                "k must lie in [1, model.num_samples = {}], got {}",
                self.model.num_samples, self.k
            )));
        }
        Ok(())
    }

    /// Seed of the latent draws at evaluation time, derived from the root seed.
    pub fn prediction_seed(&self) -> u64 {
        self.model.seed ^ 0xE7A1_5EED
    }
}

/// A dataset with its optional manifest (needed for image rasters).
#[derive(Debug, Clone)]
pub struct SourceDataset {
    pub dataset: SceneDataset,
    pub manifest: Option<DatasetManifest>,
}

impl SourceDataset {
    pub fn name(&self) -> &str {
        &self.dataset.name
    }
}

/// Model-ready windows of one dataset under one variant.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub name: String,
    pub variant: Variant,
    pub train_split: SceneDataset,
    pub boundary_frame: i64,
    pub train: Vec<ModelSample>,
    pub test: Vec<ModelSample>,
    pub raster: Option<SceneRaster>,
    pub branches: Branches,
}

/// Splits chronologically, builds windows and context features. Heat maps
/// see the training split only.
pub fn prepare_dataset(src: &SourceDataset, variant: Variant, cfg: &ExperimentConfig) -> Result<PreparedData> {
    let split = chronological_split(&src.dataset, cfg.test_fraction)?;
    let raster = scene_raster(variant, src.manifest.as_ref(), &split.train, &src.dataset, &cfg.features)?;
    let (t, tp) = (cfg.model.obs_len, cfg.model.pred_len);
    let train_windows = make_windows(&split.train, t, tp, cfg.stride)?;
    let test_windows = make_windows(&split.test, t, tp, cfg.stride)?;
    let train = prepare_samples(&split.train, train_windows, variant, raster.as_ref(), &cfg.features)?;
    let test = prepare_samples(&split.test, test_windows, variant, raster.as_ref(), &cfg.features)?;
    let branches = branches_for(variant, &cfg.features, raster.as_ref())?;
    Ok(PreparedData {
        name: src.dataset.name.clone(),
        variant,
        train_split: split.train,
        boundary_frame: split.boundary_frame,
        train,
        test,
        raster,
        branches,
    })
}

/// Every window of a whole dataset, used as source data in leave-one-out.
fn prepare_whole(src: &SourceDataset, variant: Variant, cfg: &ExperimentConfig) -> Result<(Vec<ModelSample>, Branches)> {
    let raster = scene_raster(variant, src.manifest.as_ref(), &src.dataset, &src.dataset, &cfg.features)?;
    let windows = make_windows(&src.dataset, cfg.model.obs_len, cfg.model.pred_len, cfg.stride)?;
    let samples = prepare_samples(&src.dataset, windows, variant, raster.as_ref(), &cfg.features)?;
    Ok((samples, branches_for(variant, &cfg.features, raster.as_ref())?))
}

/// Fits the offset standardizer on `train`, builds and trains a model.
pub fn train_prepared(
    train_samples: &[ModelSample],
    branches: Branches,
    config: &ModelConfig,
) -> Result<(Mcenet, Vec<EpochLoss>)> {
    if train_samples.is_empty() {
        return Err(Error::invalid("no training windows"));
    }
    let standardizer = Standardizer::fit(
        train_samples
            .iter()
            .flat_map(|s| s.window.obs_offsets.iter().chain(&s.window.fut_offsets)),
    );
    let mut model = Mcenet::new(config.clone(), branches, standardizer)?;
    let history = train(&mut model, train_samples)?;
    Ok((model, history))
}

fn ablation_run(src: &SourceDataset, variant: Variant, cfg: &ExperimentConfig) -> Result<MetricReport> {
    let data = prepare_dataset(src, variant, cfg)?;
    let (model, _) = train_prepared(&data.train, data.branches, &cfg.model)?;
    let eval = evaluate(
        &model,
        &data.test,
        &data.name,
        variant.tag(),
        cfg.k,
        cfg.model.num_samples,
        cfg.prediction_seed(),
    )?;
    Ok(eval.report)
}

/// One report per variant, all trained with the same data and seed.
pub fn run_ablation(src: &SourceDataset, variants: &[Variant], cfg: &ExperimentConfig) -> Result<Vec<MetricReport>> {
    cfg.validate()?;
    if cfg.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = variants
                .iter()
                .map(|&v| scope.spawn(move || ablation_run(src, v, cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation worker panicked"))
                .collect()
        })
    } else {
        variants.iter().map(|&v| ablation_run(src, v, cfg)).collect()
    }
}

/// Result of one visibility rate in a leave-one-out run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub rate: f64,
    /// Windows of the target's training split used for fine-tuning.
    pub finetune_samples: usize,
    /// Optimizer steps taken while fine-tuning.
    pub finetune_steps: usize,
    pub report: MetricReport,
}

/// Windows of the target's training split lying entirely before the first
/// `rate` share of its timeline.
pub fn visible_windows(data: &PreparedData, rate: f64) -> Vec<ModelSample> {
    let Some((first, last)) = data.train_split.frame_range() else {
        return Vec::new();
    };
    let cutoff = fraction_boundary(first, last, data.train_split.frame_step, rate);
    data.train
        .iter()
        .filter(|s| {
            let w = &s.window;
            w.frame_at(w.obs_len() + w.pred_len() - 1) < cutoff
        })
        .cloned()
        .collect()
}

fn loo_rate(base: &Mcenet, target: &PreparedData, rate: f64, variant: Variant, cfg: &ExperimentConfig) -> Result<LooReport> {
    let mut model = base.clone();
    let visible = if rate > 0.0 { visible_windows(target, rate) } else { Vec::new() };
    let mut steps = 0;
    if !visible.is_empty() && cfg.finetune_epochs > 0 {
        fine_tune(&mut model, &visible, cfg.finetune_epochs)?;
        steps = visible.len().div_ceil(cfg.model.batch_size) * cfg.finetune_epochs;
    }
    let eval = evaluate(
        &model,
        &target.test,
        &target.name,
        variant.tag(),
        cfg.k,
        cfg.model.num_samples,
        cfg.prediction_seed(),
    )?;
    Ok(LooReport {
        rate,
        finetune_samples: visible.len(),
        finetune_steps: steps,
        report: eval.report,
    })
}

/// Trains on every dataset except `target`, then per visibility rate
/// fine-tunes on the visible share of the target's training split and
/// evaluates on its test split.
pub fn leave_one_out(
    sources: &[SourceDataset],
    target: usize,
    rates: &[f64],
    variant: Variant,
    cfg: &ExperimentConfig,
) -> Result<Vec<LooReport>> {
    cfg.validate()?;
    if sources.len() < 2 {
        return Err(Error::invalid("leave-one-out needs at least two datasets"));
    }
    if target >= sources.len() {
        return Err(Error::invalid(format!("target index {target} out of range")));
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::invalid(format!("visibility rate {r} outside [0, 1]")));
    }
    let target_data = prepare_dataset(&sources[target], variant, cfg)?;
    let mut pool = Vec::new();
    for (i, src) in sources.iter().enumerate() {
        if i == target {
            continue;
        }
        let (samples, branches) = prepare_whole(src, variant, cfg)?;
        if branches != target_data.branches {
            return Err(Error::Shape(format!(
                "dataset {} yields branches {branches:?}, target {} yields {:?}",
                src.name(),
                target_data.name,
                target_data.branches
            )));
        }
        pool.extend(samples);
    }
    let (base, _) = train_prepared(&pool, target_data.branches, &cfg.model)?;
    if cfg.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = rates
                .iter()
                .map(|&r| {
                    let (base, target_data) = (&base, &target_data);
                    scope.spawn(move || loo_rate(base, target_data, r, variant, cfg))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("leave-one-out worker panicked"))
                .collect()
        })
    } else {
        rates
            .iter()
            .map(|&r| loo_rate(&base, &target_data, r, variant, cfg))
            .collect()
    }
}
