//! `modelpick` command line: `validate`, `sample`, `score`, `evaluate`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal error. Machine-readable output goes to stdout (or `--out`),
//! human-readable text to stderr.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bench::{EvalMode, DEFAULT_PROBE_SEEDS, DEFAULT_PROBE_SIZE};
use crate::calibrate::{Ensemble, DEFAULT_ELL_MAX, DEFAULT_LAMBDA_ELL};
use crate::embed::TaskKind;
use crate::methods::MethodKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "modelpick", version, about = "Rank pretrained source models by predicted transfer performance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a bank manifest and every file it references.
    Validate(ValidateArgs),
    /// Draw a probe set from a target's labels and print its indices as JSON.
    Sample(SampleArgs),
    /// Score one (source model, target) transfer and print a JSON record.
    Score(ScoreArgs),
    /// Run the benchmark over a bank and write an evaluation report.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Label file to sample from.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub labels: Option<PathBuf>,
    /// Bank manifest; the label file of `--target` is used.
    #[arg(long, requires = "target")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    /// Label format; detected from the file when omitted.
    #[arg(long)]
    pub kind: Option<TaskKind>,
    /// Probe budget.
    #[arg(long, default_value_t = DEFAULT_PROBE_SIZE)]
    pub n: usize,
    #[arg(long, env = "MODELPICK_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub method: MethodKind,
    /// Source-model features, one row per probe image.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Source-model class probabilities (LEEP, NCE).
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// Probe-model features (RSA, DDS).
    #[arg(long)]
    pub probe_features: Option<PathBuf>,
    /// Reduce features to this many principal components.
    #[arg(long)]
    pub pca: Option<usize>,
    /// Standardize feature columns before scoring.
    #[arg(long)]
    pub normalize: bool,
    /// Neighbours for knn_cv.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, env = "MODELPICK_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Target class count; inferred from the labels when omitted.
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Source model depth in layers (heuristic).
    #[arg(long)]
    pub depth: Option<u32>,
    /// Source dataset size (heuristic).
    #[arg(long)]
    pub source_size: Option<u64>,
    /// Target dataset size (heuristic).
    #[arg(long)]
    pub target_size: Option<u64>,
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long)]
    pub target_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<MethodKind>,
    #[arg(long, default_value_t = EvalMode::VaryingSource)]
    pub mode: EvalMode,
    /// Probe budget per target.
    #[arg(long, default_value_t = DEFAULT_PROBE_SIZE)]
    pub n: usize,
    /// Number of probe sets (seeds) to average over.
    #[arg(long, default_value_t = DEFAULT_PROBE_SEEDS)]
    pub probes: usize,
    #[arg(long, default_value_t = Ensemble::None)]
    pub ensemble: Ensemble,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_ELL)]
    pub lambda_ell: f64,
    #[arg(long, default_value_t = DEFAULT_ELL_MAX)]
    pub ell_max: u32,
    /// PCA dimension for feature-based methods.
    #[arg(long)]
    pub pca: Option<usize>,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, env = "MODELPICK_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a methods × targets CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Top-k relative accuracy cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub topk: Vec<usize>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Serialize scoring so reported times are uncontended (implies --jobs 1).
    #[arg(long)]
    pub timing: bool,
}

/// Parses `args` (program name first) and runs the subcommand; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = std::panic::catch_unwind(|| commands::dispatch(cli.command));
    match outcome {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
        Err(_) => {
            eprintln!("error: internal failure");
            EXIT_INTERNAL
        }
    }
}
