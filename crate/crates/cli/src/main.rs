//! `smoothdate`: synthesize data, train, evaluate, index, query, project and
//! serve.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numeric failure, 4 environment.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smoothdate_core::Error as CoreError;
use smoothdate_service::{ConfigError, ServiceError};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(
    name = "smoothdate",
    version,
    about = "Date estimation by learned ranking"
)]
pub struct Cli {
    /// TOML configuration file (same format as the service's).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Base directory for relative paths.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,

    /// Print the resolved configuration with the origin of every field.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset (CSV plus a spec echo).
    Synth(SynthArgs),
    /// Train a model and write its checkpoint and report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split; prints JSON metrics.
    Eval(EvalArgs),
    /// Embed the training split (and feedback) into an index snapshot.
    Index(IndexArgs),
    /// Rank the index for each query record.
    Query(QueryArgs),
    /// Write the 2-D projection of per-year cluster centers as CSV.
    Project(ProjectArgs),
    /// Run the HTTP service until terminated.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output CSV; the spec is echoed next to it as `<out>.spec.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with a full synthetic spec; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub year_lo: Option<i32>,
    #[arg(long)]
    pub year_hi: Option<i32>,
    #[arg(long)]
    pub docs_per_year: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Flags shared by commands that read a dataset and split it.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Labeled dataset (CSV or JSONL).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Report output path (default: `<out>.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Relevance matrix file; overrides `--matrix-spec`.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Relevance spec as inline JSON or a JSON file, e.g.
    /// `{"kind":"thresholded","gamma":10}`.
    #[arg(long)]
    pub matrix_spec: Option<String>,
    #[arg(long, alias = "epochs")]
    pub iters: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Training (batch order) seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight initialization seed.
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub activation: Option<String>,
    /// Include per-iteration wall-clock times in the report.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Neighbors used for the year estimate.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Index snapshot output (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Feedback journal to include (default: the configured one, if present).
    #[arg(long)]
    pub feedback: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Query records (CSV or JSONL dataset; years may be empty).
    #[arg(long)]
    pub features_file: PathBuf,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Neighbors used for the year estimate.
    #[arg(long)]
    pub k: Option<usize>,
    /// Machine-readable output.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Core(#[from] CoreError),

    #[error("{0}")]
    Config(#[from] ConfigError),

    #[error("{0}")]
    Service(#[from] ServiceError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Core(e) => core_code(e),
            CliError::Service(ServiceError::Config(_)) => 2,
            CliError::Service(ServiceError::Core(e)) => core_code(e),
            CliError::Service(ServiceError::Bind { .. } | ServiceError::Io(_)) => 4,
            CliError::Io { .. } => 4,
        }
    }
}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::NumericFailure { .. } => 3,
        // Unreadable or malformed inputs are the caller's problem.
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
