use std::path::PathBuf;

use ccmtune_core::objective::Template;
use ccmtune_core::optimizer::{GradientStrategy, OptimizerKind};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ccmtune", version, about = "Prompt-driven color correction matrix tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tune a matrix for one image and write its artifacts.
    Tune(TuneArgs),
    /// Apply an exported matrix to an image at full resolution.
    Apply(ApplyArgs),
    /// Run the vibrant-versus-dull experiment over a corpus directory.
    Experiment(ExperimentArgs),
    /// Run the HTTP job service.
    Serve(ServeArgs),
    /// Delete finished jobs from the service data directory.
    Purge(PurgeArgs),
}

/// Tuning flags shared by `tune` and `experiment`. Unset flags fall back
/// to `--config`, then to the library defaults.
#[derive(Debug, Args)]
pub struct TuningFlags {
    /// Prompt template A, B, C or D; B renders "A {keyword} photo".
    #[arg(long)]
    pub template: Option<Template>,
    /// Scene description for template D.
    #[arg(long)]
    pub content: Option<String>,
    /// Bound on every off-diagonal parameter.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// adam, adamw or sgd.
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    /// auto, analytic, fd or spsa.
    #[arg(long)]
    pub grad: Option<GradientStrategy>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Stop when the loss plateaus.
    #[arg(long)]
    pub early_stop: bool,
    /// `synthetic[:SIZE]`, `remote:URL`, `graph:DIR`, or a backend name
    /// from the service configuration. Defaults to `synthetic`.
    #[arg(long)]
    pub backend: Option<String>,
    /// Tuning configuration JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Style keyword, e.g. "vibrant".
    #[arg(long)]
    pub prompt: Option<String>,
    /// Second keyword; enables the two-prompt objective.
    #[arg(long)]
    pub prompt_b: Option<String>,
    /// Target share of the first prompt in the two-prompt objective.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[command(flatten)]
    pub tuning: TuningFlags,
    #[arg(long, default_value = "ccmtune-out")]
    pub out_dir: PathBuf,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Directory of PNG or JPEG images.
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub tuning: TuningFlags,
    /// Comma-separated tau values, e.g. "0.25,0.33,0.5,1.0".
    #[arg(long, value_delimiter = ',')]
    pub sweep_tau: Vec<f64>,
    /// Images tuned concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "ccmtune-experiment")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Service configuration JSON; defaults to $CCMTUNE_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PurgeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also delete jobs that finished successfully.
    #[arg(long)]
    pub include_done: bool,
}
