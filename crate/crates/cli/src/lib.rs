//! Command-line front end: configuration, subcommands and plot output.

pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::ConfigError;

#[derive(Debug, Parser)]
#[command(name = "mcenet", version, about = "Multi-path trajectory prediction for mixed road users")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set experiment.model.epochs=5`. Repeatable; last wins.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Dataset manifest; replaces `data.manifests`. Repeatable.
    #[arg(long = "manifest", global = true)]
    pub manifests: Vec<PathBuf>,
    /// Output directory (default: config, then $MCENET_OUTPUT_ROOT/<command>).
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Root seed; replaces `experiment.model.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Model variant tag; replaces `run.variant`.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Dataset to use when several manifests are given (default: the first).
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    /// Increase log verbosity.
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, resample and split datasets; report window counts and cache heat maps.
    Prepare,
    /// Train one model and write a checkpoint and loss log.
    Train,
    /// Sample and rank futures for the test windows.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compute ADE/FDE from a checkpoint or a predictions CSV.
    Evaluate {
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Train and evaluate several variants with the same data and seed.
    Ablate {
        /// Comma-separated variant tags (default: all six).
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Leave-one-out cross-validation over the configured datasets.
    Loo {
        /// Name of the held-out dataset.
        #[arg(long)]
        target: String,
        /// Comma-separated visibility rates in [0, 1].
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        rates: Vec<f64>,
    },
    /// Draw past, ground truth and predicted fans over the scene raster.
    Plot {
        #[arg(long)]
        predictions: PathBuf,
        /// Background raster (image or cache); defaults to the manifest's aerial image.
        #[arg(long)]
        raster: Option<PathBuf>,
        /// Maximum number of windows to draw.
        #[arg(long)]
        limit: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::Train => "train",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::Loo { .. } => "loo",
            Command::Plot { .. } => "plot",
        }
    }
}

/// Failure of a subcommand, mapped to an exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] mcenet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        1
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit status: 0 on success, 1 on configuration or
/// runtime failure, 2 on usage errors.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.common.verbose);
    match commands::run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
