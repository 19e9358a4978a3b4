//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use mcenet::context::{load_raster, save_raster_cache, RasterKind, SceneRaster};
use mcenet::dataio::{load_manifest, make_windows, TrainingSample};
use mcenet::eval::io::{
    read_predictions_csv, write_loo_csv, write_loo_json, write_metrics_csv, write_metrics_json,
    write_predictions_csv, write_sample_csv,
};
use mcenet::eval::{
    evaluate, leave_one_out, prepare_dataset, run_ablation, score_predictions, train_prepared, ExperimentConfig,
    GroundTruth, MetricReport, PreparedData, SourceDataset,
};
use mcenet::features::{load_any_raster, FeatureConfig};
use mcenet::model::{load_checkpoint, save_checkpoint, write_loss_log, Mcenet, PredictionSet};
use mcenet::{Error, Variant};

use crate::config::{load_config, output_dir, CliConfig, ConfigError};
use crate::plot::{emit_plots, PlotWindow};
use crate::{Cli, CliError, Command};

type CmdResult<T = ()> = Result<T, CliError>;

/// Everything a subcommand needs after configuration is resolved.
struct Context {
    cfg: CliConfig,
    variant: Variant,
    out: PathBuf,
    dataset: Option<String>,
}

pub fn run(cli: &Cli) -> CmdResult {
    let common = &cli.common;
    let mut cfg = load_config(common.config.as_deref(), &common.overrides)?;
    if !common.manifests.is_empty() {
        cfg.data.manifests = common.manifests.clone();
    }
    if let Some(seed) = common.seed {
        cfg.experiment.model.seed = seed;
    }
    if let Some(v) = &common.variant {
        cfg.run.variant = v.clone();
    }
    cfg.validate()?;
    let out = output_dir(common.output.as_deref(), &cfg, cli.command.name());
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    cfg.run.output_dir = Some(out.clone());
    write_text(&out.join("resolved_config.toml"), &cfg.to_toml())?;
    let ctx = Context {
        variant: cfg.variant()?,
        cfg,
        out,
        dataset: common.dataset.clone(),
    };
    log::info!("{} -> {}", cli.command.name(), ctx.out.display());
    match &cli.command {
        Command::Prepare => prepare(&ctx),
        Command::Train => train(&ctx),
        Command::Predict { checkpoint } => predict(&ctx, checkpoint),
        Command::Evaluate {
            checkpoint: Some(ckpt), ..
        } => evaluate_checkpoint(&ctx, ckpt),
        Command::Evaluate {
            predictions: Some(p), ..
        } => evaluate_predictions(&ctx, p),
        Command::Evaluate { .. } => Err(ConfigError::Invalid("evaluate needs --checkpoint or --predictions".into()).into()),
        Command::Ablate { variants } => ablate(&ctx, variants),
        Command::Loo { target, rates } => loo(&ctx, target, rates),
        Command::Plot {
            predictions,
            raster,
            limit,
        } => plot(&ctx, predictions, raster.as_deref(), *limit),
    }
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(path, &(text + "\n"))
}

fn load_sources(cfg: &CliConfig) -> CmdResult<Vec<SourceDataset>> {
    if cfg.data.manifests.is_empty() {
        return Err(ConfigError::Invalid("no dataset: set data.manifests or pass --manifest".into()).into());
    }
    cfg.data
        .manifests
        .iter()
        .map(|path| {
            let manifest = load_manifest(path)?;
            manifest.validate()?;
            let dataset = manifest.load()?;
            log::info!(
                "loaded {} ({} records, {} agents)",
                dataset.name,
                dataset.num_records(),
                dataset.tracks.len()
            );
            Ok(SourceDataset {
                dataset,
                manifest: Some(manifest),
            })
        })
        .collect()
}

fn select<'a>(sources: &'a [SourceDataset], name: Option<&str>) -> CmdResult<&'a SourceDataset> {
    match name {
        None => Ok(&sources[0]),
        Some(n) => sources.iter().find(|s| s.name() == n).ok_or_else(|| {
            let known: Vec<&str> = sources.iter().map(|s| s.name()).collect();
            ConfigError::Invalid(format!("unknown dataset {n:?}; configured: {known:?}")).into()
        }),
    }
}

fn report_line(r: &MetricReport) -> String {
    format!(
        "{} {}: ADE {:.4} FDE {:.4} (most likely), ADE {:.4} FDE {:.4} (best of {}), {} windows",
        r.dataset, r.variant, r.ade_most_likely, r.fde_most_likely, r.ade_best_of_k, r.fde_best_of_k, r.k, r.sample_count
    )
}

fn prepare(ctx: &Context) -> CmdResult {
    let sources = load_sources(&ctx.cfg)?;
    let mut summary = Vec::new();
    for src in &sources {
        let data = prepare_dataset(src, ctx.variant, &ctx.cfg.experiment)?;
        let mut entry = json!({
            "dataset": data.name,
            "variant": ctx.variant.tag(),
            "records": src.dataset.num_records(),
            "agents": src.dataset.tracks.len(),
            "type_counts": src.dataset.type_counts(),
            "frame_range": src.dataset.frame_range(),
            "boundary_frame": data.boundary_frame,
            "train_windows": data.train.len(),
            "test_windows": data.test.len(),
        });
        if let Some(raster) = data.raster.as_ref().filter(|r| r.kind == RasterKind::HeatMap) {
            let path = ctx.out.join(format!("{}_heat_map.bin", data.name));
            save_raster_cache(raster, &path)?;
            entry["heat_map_cache"] = json!(path);
        }
        println!(
            "{}: {} train / {} test windows, boundary frame {}",
            data.name,
            data.train.len(),
            data.test.len(),
            data.boundary_frame
        );
        summary.push(entry);
    }
    write_json(&ctx.out.join("prepare_summary.json"), &summary)
}

/// Lowercase hex SHA-256 of a file.
pub fn file_digest(path: &Path) -> mcenet::Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn train(ctx: &Context) -> CmdResult {
    let sources = load_sources(&ctx.cfg)?;
    let src = select(&sources, ctx.dataset.as_deref())?;
    let exp = &ctx.cfg.experiment;
    let data = prepare_dataset(src, ctx.variant, exp)?;
    log::info!("training {} on {} windows of {}", ctx.variant, data.train.len(), data.name);
    let (model, history) = train_prepared(&data.train, data.branches, &exp.model)?;
    let mut meta = Map::new();
    meta.insert("variant".into(), json!(ctx.variant.tag()));
    meta.insert("dataset".into(), json!(data.name));
    meta.insert("features".into(), serde_json::to_value(&exp.features).expect("features serialize"));
    let ckpt = ctx.out.join("model.ckpt");
    save_checkpoint(&ckpt, &model, &meta)?;
    write_loss_log(&ctx.out.join("train_log.csv"), &history)?;
    let digest = file_digest(&ckpt)?;
    write_text(&ctx.out.join("model.ckpt.sha256"), &format!("{digest}  model.ckpt\n"))?;
    println!("{digest}");
    Ok(())
}

/// A checkpoint together with the experiment settings it implies.
struct Loaded {
    model: Mcenet,
    variant: Variant,
    dataset: Option<String>,
    exp: ExperimentConfig,
    prediction_seed: u64,
}

/// Loads a checkpoint. Network settings come from the checkpoint; split,
/// sample count and seed come from the run configuration.
fn load_model(ctx: &Context, path: &Path) -> CmdResult<Loaded> {
    let ckpt = load_checkpoint(path)?;
    let variant = match ckpt.meta.get("variant").and_then(Value::as_str) {
        Some(tag) => tag.parse()?,
        None => ctx.variant,
    };
    let mut exp = ctx.cfg.experiment.clone();
    let prediction_seed = exp.prediction_seed();
    let num_samples = exp.model.num_samples;
    exp.model = ckpt.model.config.clone();
    exp.model.num_samples = num_samples;
    if let Some(f) = ckpt.meta.get("features") {
        exp.features = serde_json::from_value::<FeatureConfig>(f.clone())
            .map_err(|e| Error::Checkpoint(format!("bad feature settings: {e}")))?;
    }
    exp.validate()?;
    Ok(Loaded {
        dataset: ckpt.meta.get("dataset").and_then(Value::as_str).map(str::to_string),
        model: ckpt.model,
        variant,
        exp,
        prediction_seed,
    })
}

fn prepare_for(ctx: &Context, loaded: &Loaded, sources: &[SourceDataset]) -> CmdResult<PreparedData> {
    let name = ctx
        .dataset
        .as_deref()
        .or(loaded.dataset.as_deref().filter(|n| sources.iter().any(|s| s.name() == *n)));
    let src = select(sources, name)?;
    let data = prepare_dataset(src, loaded.variant, &loaded.exp)?;
    if data.branches != loaded.model.branches {
        return Err(Error::Shape(format!(
            "checkpoint expects inputs {:?}, dataset {} provides {:?}",
            loaded.model.branches, data.name, data.branches
        ))
        .into());
    }
    Ok(data)
}

fn predict(ctx: &Context, checkpoint: &Path) -> CmdResult {
    let loaded = load_model(ctx, checkpoint)?;
    let sources = load_sources(&ctx.cfg)?;
    let data = prepare_for(ctx, &loaded, &sources)?;
    let sets = loaded
        .model
        .predict_many(&data.test, loaded.exp.model.num_samples, loaded.prediction_seed)?;
    let truths: Vec<GroundTruth> = data.test.iter().map(GroundTruth::of).collect();
    let path = ctx.out.join("predictions.csv");
    write_predictions_csv(&path, &truths, &sets)?;
    println!("{} windows -> {}", sets.len(), path.display());
    Ok(())
}

fn write_evaluation(ctx: &Context, report: &MetricReport, rows: &[mcenet::eval::SampleMetrics]) -> CmdResult {
    let reports = std::slice::from_ref(report);
    write_metrics_csv(&ctx.out.join("metrics.csv"), reports)?;
    write_metrics_json(&ctx.out.join("metrics.json"), reports)?;
    write_sample_csv(&ctx.out.join("samples.csv"), rows)?;
    println!("{}", report_line(report));
    Ok(())
}

fn evaluate_checkpoint(ctx: &Context, checkpoint: &Path) -> CmdResult {
    let loaded = load_model(ctx, checkpoint)?;
    let sources = load_sources(&ctx.cfg)?;
    let data = prepare_for(ctx, &loaded, &sources)?;
    let ev = evaluate(
        &loaded.model,
        &data.test,
        &data.name,
        loaded.variant.tag(),
        loaded.exp.k,
        loaded.exp.model.num_samples,
        loaded.prediction_seed,
    )?;
    let truths: Vec<GroundTruth> = data.test.iter().map(GroundTruth::of).collect();
    write_predictions_csv(&ctx.out.join("predictions.csv"), &truths, &ev.predictions)?;
    write_evaluation(ctx, &ev.report, &ev.rows)
}

/// Scores an externally produced predictions CSV against the test windows
/// of the selected dataset.
fn evaluate_predictions(ctx: &Context, path: &Path) -> CmdResult {
    let sources = load_sources(&ctx.cfg)?;
    let src = select(&sources, ctx.dataset.as_deref())?;
    let data = prepare_dataset(src, Variant::Baseline, &ctx.cfg.experiment)?;
    let mut predicted = read_predictions_csv(path)?;
    let mut truths = Vec::new();
    let mut sets = Vec::new();
    for sample in &data.test {
        let key = (data.name.clone(), sample.window.agent_id, sample.window.start_frame);
        if let Some(set) = predicted.remove(&key) {
            truths.push(GroundTruth::of(sample));
            sets.push(set);
        }
    }
    if let Some((key, _)) = predicted.iter().next() {
        return Err(ConfigError::Invalid(format!(
            "{} predicted windows match no test window of {}, e.g. {key:?}",
            predicted.len(),
            data.name
        ))
        .into());
    }
    if sets.is_empty() {
        return Err(Error::invalid(format!("no predictions for the test windows of {}", data.name)).into());
    }
    if sets.len() < data.test.len() {
        log::warn!("{} of {} test windows have no predictions", data.test.len() - sets.len(), data.test.len());
    }
    let smallest = sets.iter().map(PredictionSet::len).min().unwrap_or(1);
    let k = ctx.cfg.experiment.k.min(smallest);
    if k < ctx.cfg.experiment.k {
        log::warn!("only {smallest} trajectories per window; using k = {k}");
    }
    let (report, rows) = score_predictions(&data.name, "external", &truths, &sets, k)?;
    write_predictions_csv(&ctx.out.join("predictions.csv"), &truths, &sets)?;
    write_evaluation(ctx, &report, &rows)
}

fn ablate(ctx: &Context, tags: &[String]) -> CmdResult {
    let variants: Vec<Variant> = if tags.is_empty() {
        Variant::ALL.to_vec()
    } else {
        tags.iter().map(|t| t.parse()).collect::<mcenet::Result<_>>()?
    };
    let sources = load_sources(&ctx.cfg)?;
    let src = select(&sources, ctx.dataset.as_deref())?;
    let reports = run_ablation(src, &variants, &ctx.cfg.experiment)?;
    write_metrics_csv(&ctx.out.join("ablation.csv"), &reports)?;
    write_metrics_json(&ctx.out.join("ablation.json"), &reports)?;
    for r in &reports {
        println!("{}", report_line(r));
    }
    Ok(())
}

fn loo(ctx: &Context, target: &str, rates: &[f64]) -> CmdResult {
    let sources = load_sources(&ctx.cfg)?;
    let idx = sources
        .iter()
        .position(|s| s.name() == target)
        .ok_or_else(|| ConfigError::Invalid(format!("unknown leave-one-out target {target:?}")))?;
    let reports = leave_one_out(&sources, idx, rates, ctx.variant, &ctx.cfg.experiment)?;
    write_loo_csv(&ctx.out.join("loo.csv"), &reports)?;
    write_loo_json(&ctx.out.join("loo.json"), &reports)?;
    for r in &reports {
        println!("rate {:.2} ({} windows): {}", r.rate, r.finetune_samples, report_line(&r.report));
    }
    Ok(())
}

fn background(ctx: &Context, src: &SourceDataset, explicit: Option<&Path>) -> CmdResult<Option<SceneRaster>> {
    let mpp = src.dataset.meters_per_pixel;
    if let Some(p) = explicit {
        return Ok(Some(load_any_raster(p, RasterKind::Aerial, mpp)?));
    }
    let aerial = src.manifest.as_ref().and_then(|m| m.rasters.aerial.as_deref());
    match aerial {
        Some(p) if p.exists() => Ok(Some(load_raster(p, RasterKind::Aerial, mpp, None)?)),
        _ => {
            log::warn!(
                "no background raster for {}; drawing on a blank canvas in {}",
                src.name(),
                ctx.out.display()
            );
            Ok(None)
        }
    }
}

fn plot(ctx: &Context, predictions: &Path, raster: Option<&Path>, limit: Option<usize>) -> CmdResult {
    let sources = load_sources(&ctx.cfg)?;
    let src = select(&sources, ctx.dataset.as_deref())?;
    let predicted = read_predictions_csv(predictions)?;
    let pred_len = predicted
        .values()
        .next()
        .map(|s| s.trajectories[0].len())
        .ok_or_else(|| Error::invalid(format!("{} holds no predictions", predictions.display())))?;
    let windows = make_windows(&src.dataset, ctx.cfg.experiment.model.obs_len, pred_len, 1)?;
    let by_key: BTreeMap<_, &TrainingSample> = windows
        .iter()
        .map(|w| ((src.name().to_string(), w.agent_id, w.start_frame), w))
        .collect();
    let mut plots = Vec::new();
    for (key, set) in predicted {
        if limit.is_some_and(|l| plots.len() >= l) {
            break;
        }
        let Some(w) = by_key.get(&key) else {
            log::warn!("no window of {} matches {key:?}; skipped", src.name());
            continue;
        };
        plots.push(PlotWindow {
            dataset: key.0,
            agent_id: key.1,
            start_frame: key.2,
            past: w.obs_positions.clone(),
            truth: w.fut_positions.clone(),
            predictions: set,
        });
    }
    let bg = background(ctx, src, raster)?;
    let written = emit_plots(&ctx.out, &plots, bg.as_ref(), src.dataset.meters_per_pixel)?;
    println!("{} plots -> {}", written.len(), ctx.out.display());
    Ok(())
}
