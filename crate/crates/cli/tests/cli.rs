use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcenet::dataio::{chronological_split, load_manifest, make_windows, write_trajectories};
use mcenet::eval::io::{read_metrics_csv, write_predictions_csv};
use mcenet::eval::GroundTruth;
use mcenet::model::PredictionSet;
use mcenet::synthetic::{generate, SyntheticSpec};

const TINY: &str = r#"
[run]
variant = "+hm+gp"

[experiment]
test_fraction = 0.5
k = 2
finetune_epochs = 1

[experiment.model]
epochs = 1
batch_size = 16
lstm_hidden = 8
fusion_dim = 8
motion_channels = 4
latent_dim = 2
cnn_channels = [2, 2, 2]
cnn_kernel_sizes = [3, 3, 3]
num_samples = 3
kl_weight = 0.01

[experiment.features.scene]
input_size = 8
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(agents: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            name: "tiny".into(),
            agents,
            track_len: 40,
            timeline: 10,
            area: 30.0,
            ..SyntheticSpec::default()
        };
        let ds = generate(&spec).unwrap();
        std::fs::write(dir.path().join("tiny.txt"), write_trajectories(&ds)).unwrap();
        std::fs::write(
            dir.path().join("tiny.toml"),
            "name = \"tiny\"\ntrajectories = \"tiny.txt\"\nframe_rate = 2.5\nmeters_per_pixel = 0.5\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("run.toml"),
            format!("[data]\nmanifests = [\"tiny.toml\"]\n{TINY}"),
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_mcenet"))
            .args(args)
            .env("MCENET_OUTPUT_ROOT", self.path("out"))
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn run_ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let fx = Fixture::new(6);
    assert_eq!(fx.run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(fx.run(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(fx.run(&["evaluate"]).status.code(), Some(2));
}

#[test]
fn configuration_errors_exit_with_one() {
    let fx = Fixture::new(6);
    std::fs::write(fx.path("bad.toml"), "[experiment.model]\nepochs = \"many\"\n").unwrap();
    let out = fx.run(&["prepare", "--config", s(&fx.path("bad.toml"))]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(fx.path("unknown.toml"), "[experiment]\nno_such_key = 1\n").unwrap();
    let out = fx.run(&["prepare", "--config", s(&fx.path("unknown.toml"))]);
    assert_eq!(out.status.code(), Some(1));

    let config = fx.path("run.toml");
    let out = fx.run(&["prepare", "--config", s(&config), "--set", "experiment.k=99"]);
    assert_eq!(out.status.code(), Some(1));
    let out = fx.run(&["prepare", "--config", s(&config), "--manifest", "/no/such/manifest.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let out = fx.run(&["prepare", "--config", s(&config), "--variant", "+xx"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn prepare_writes_summary_heat_map_and_resolved_config() {
    let fx = Fixture::new(9);
    let out = fx.path("prep");
    fx.run_ok(&["prepare", "--config", s(&fx.path("run.toml")), "--output", s(&out)]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("prepare_summary.json")).unwrap()).unwrap();
    assert_eq!(summary[0]["dataset"], "tiny");
    assert!(summary[0]["train_windows"].as_u64().unwrap() > 0);
    assert!(out.join("tiny_heat_map.bin").is_file());
    let resolved = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("output_dir"));
}

#[test]
fn output_root_comes_from_environment() {
    let fx = Fixture::new(6);
    fx.run_ok(&["prepare", "--config", s(&fx.path("run.toml")), "--variant", "baseline"]);
    assert!(fx.path("out/prepare/resolved_config.toml").is_file());
}

#[test]
fn train_twice_gives_identical_checkpoints() {
    let fx = Fixture::new(9);
    let config = fx.path("run.toml");
    let (a, b) = (fx.path("a"), fx.path("b"));
    let da = fx.run_ok(&["train", "--config", s(&config), "--output", s(&a), "--seed", "5"]);
    let db = fx.run_ok(&["train", "--config", s(&config), "--output", s(&b), "--seed", "5"]);
    assert_eq!(da.trim().len(), 64);
    assert_eq!(da, db);
    assert_eq!(std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());
    let log = std::fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,mse,kl,total\n"));
    let other = fx.run_ok(&["train", "--config", s(&config), "--output", s(&fx.path("c")), "--seed", "6"]);
    assert_ne!(da, other);
}

#[test]
fn predict_then_evaluate_and_plot() {
    let fx = Fixture::new(9);
    let config = fx.path("run.toml");
    let train = fx.path("train");
    fx.run_ok(&["train", "--config", s(&config), "--output", s(&train)]);
    let ckpt = train.join("model.ckpt");

    let pred = fx.path("pred");
    fx.run_ok(&["predict", "--config", s(&config), "--output", s(&pred), "--checkpoint", s(&ckpt)]);
    let eval = fx.path("eval");
    fx.run_ok(&["evaluate", "--config", s(&config), "--output", s(&eval), "--checkpoint", s(&ckpt)]);
    // Both runs use the same seed, so the stored predictions agree.
    assert_eq!(
        std::fs::read_to_string(pred.join("predictions.csv")).unwrap(),
        std::fs::read_to_string(eval.join("predictions.csv")).unwrap()
    );
    let rows = read_metrics_csv(&eval.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].variant, "+hm+gp");
    assert!(rows[0].ade_bk <= rows[0].ade_ml);

    let plots = fx.path("plots");
    let csv = pred.join("predictions.csv");
    fx.run_ok(&["plot", "--config", s(&config), "--output", s(&plots), "--predictions", s(&csv), "--limit", "3"]);
    let pngs = std::fs::read_dir(&plots)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 3);
}

#[test]
fn a_perfect_predictions_file_scores_zero() {
    let fx = Fixture::new(9);
    let manifest = load_manifest(&fx.path("tiny.toml")).unwrap();
    let ds = manifest.load().unwrap();
    let split = chronological_split(&ds, 0.5).unwrap();
    let windows = make_windows(&split.test, 8, 8, 1).unwrap();
    assert!(!windows.is_empty());
    let truths: Vec<GroundTruth> = windows
        .iter()
        .map(|w| GroundTruth {
            dataset: "tiny".into(),
            agent_id: w.agent_id,
            start_frame: w.start_frame,
            future: w.fut_positions.clone(),
        })
        .collect();
    let sets: Vec<PredictionSet> = truths
        .iter()
        .map(|t| PredictionSet::ranked(vec![t.future.clone(), t.future.clone()]).unwrap())
        .collect();
    let csv = fx.path("perfect.csv");
    write_predictions_csv(&csv, &truths, &sets).unwrap();

    let eval = fx.path("eval");
    let config = fx.path("run.toml");
    fx.run_ok(&["evaluate", "--config", s(&config), "--output", s(&eval), "--predictions", s(&csv)]);
    let rows = read_metrics_csv(&eval.join("metrics.csv")).unwrap();
    assert_eq!(rows[0].variant, "external");
    assert_eq!(rows[0].n_samples, windows.len());
    for v in [rows[0].ade_ml, rows[0].fde_ml, rows[0].ade_bk, rows[0].fde_bk] {
        assert_eq!(v, 0.0);
    }
}

#[test]
fn runtime_errors_exit_with_one() {
    let fx = Fixture::new(6);
    std::fs::write(fx.path("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = fx.run(&[
        "evaluate",
        "--config",
        s(&fx.path("run.toml")),
        "--checkpoint",
        s(&fx.path("junk.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
