use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "genad", version, about = "Multivariate time-series anomaly detection by masked reconstruction")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random draw; overrides seeds in config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration with optional `model`, `train` and `detect` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic fleet.
    Synth(SynthArgs),
    /// Train one model across a fleet of entities.
    Pretrain(PretrainArgs),
    /// Adapt a checkpoint to one entity, or train on it from scratch.
    Finetune(FinetuneArgs),
    /// Score an entity, calibrate thresholds and flag anomalies.
    Detect(DetectArgs),
    /// Aggregate detection reports into a precision/recall/F1 table.
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic spec JSON; defaults to the built-in 18-metric spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Glob matching entity CSV files.
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Checkpoint to start from.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Entity CSV file.
    #[arg(long)]
    pub data: PathBuf,
    /// Start from fresh weights instead of the base checkpoint.
    #[arg(long)]
    pub scratch: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Train on only the first this many points.
    #[arg(long)]
    pub train_points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Entity CSV file; a sibling `.labels.csv` enables calibration and scoring.
    #[arg(long)]
    pub data: PathBuf,
    /// Expected anomaly rate, in (0, 1).
    #[arg(long)]
    pub a_r: Option<f64>,
    /// Points before this index are training data; the tail of them calibrates
    /// thresholds and detection runs on the rest.
    #[arg(long)]
    pub train_points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Glob matching report.json files.
    #[arg(long)]
    pub reports: String,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Perturb backward passes so the check must fail.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}
