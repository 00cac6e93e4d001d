//! Command-line surface: `gen-data`, `train`, `eval` and `predict`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (missing or malformed files, corrupt checkpoint, label mismatch),
//! 3 numerical failure.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{parse_assignment, EvalSettings, ModelSettings, Paths, RunConfig};

use crate::evaluation::InferenceMode;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "deci",
    version,
    about = "Counterfactually debiased multi-label code prediction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file of dotted configuration keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for both data generation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output location: data directory, checkpoint, report or predictions
    /// depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extra configuration override, e.g. `--set model.n_experts=2`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment, global = true)]
    pub set: Vec<(String, serde_json::Value)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with a planted demographic confound.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Data directory holding train.jsonl, dev.jsonl and labels.txt.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score a labelled JSONL file and print a metric report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Labelled documents; defaults to test.jsonl in the data directory.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<InferenceMode>,
        /// Report every inference mode side by side.
        #[arg(long)]
        ablate: bool,
        /// Write per-document final scores as JSONL.
        #[arg(long, value_name = "PATH")]
        dump_scores: Option<PathBuf>,
    },
    /// Predict codes for unlabelled documents.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// JSONL documents; `codes` may be omitted.
        input: PathBuf,
    },
}

/// Builds the effective configuration: defaults, then `--config`, then
/// `--set`, then `--seed`.
pub fn resolve_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(common.set.iter().cloned())?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

/// Parses arguments and runs a command, writing results to `stdout` and
/// diagnostics to `stderr`. Returns the process exit code.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    match commands::dispatch(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}
