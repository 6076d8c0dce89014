//! `docee` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Maybe;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<docee_core::Error> for CliError {
    fn from(e: docee_core::Error) -> Self {
        use docee_core::Error as E;
        match e {
            E::Config(_) => CliError::Usage(e.to_string()),
            E::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "docee", version, about = "Document-level event extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus and its schema.
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus training logs.
    Train(TrainArgs),
    /// Extract event records from a corpus with a trained checkpoint.
    Extract(ExtractArgs),
    /// Score predictions against gold records.
    Eval(EvalArgs),
}

/// Every setting can also be given in the `--config` file as `key = value`,
/// with the flag name as key. Flags win over the file; the file wins over
/// built-in defaults.
#[derive(Args, Debug)]
pub struct GenArgs {
    /// key = value settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; receives corpus.jsonl, schema.json and config.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of documents (default 1000).
    #[arg(long)]
    pub docs: Option<usize>,
    /// Generator seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of event types (default 3).
    #[arg(long)]
    pub types: Option<usize>,
    /// Roles per event type (default 4).
    #[arg(long)]
    pub roles: Option<usize>,
    /// Fraction of documents with several records (default 0.29).
    #[arg(long)]
    pub multi_fraction: Option<f64>,
    /// Largest record count of a multi-record document (default 3).
    #[arg(long)]
    pub max_events: Option<usize>,
    /// Exact record count for every document, or `none` (default none).
    #[arg(long)]
    pub events_per_doc: Option<Maybe<usize>>,
    /// All records of a document share one event type (default false).
    #[arg(long)]
    pub same_type: Option<bool>,
    /// Smallest number of sentences one record spans (default 1).
    #[arg(long)]
    pub scatter_min: Option<usize>,
    /// Largest number of sentences one record spans (default 4).
    #[arg(long)]
    pub scatter_max: Option<usize>,
    /// Probability that a role is filled (default 0.9).
    #[arg(long)]
    pub role_fill_prob: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// key = value settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training corpus (JSONL).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Event schema (JSON).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Development corpus scored after every epoch, or `none`.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Output directory; receives model.ckpt, train_log.jsonl, epochs.jsonl and config.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint to continue from, or `none`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Model width (default 64).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Layers per encoder (default 2).
    #[arg(long)]
    pub layers: Option<usize>,
    /// Attention heads per layer (default 4).
    #[arg(long)]
    pub heads: Option<usize>,
    /// Total number of epochs, counting resumed ones (default 20).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Documents per optimizer step (default 4).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate (default 0.001).
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Seed for initialization and shuffling (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the detection loss (default 1.0).
    #[arg(long)]
    pub lambda_rr: Option<f64>,
    /// Weight of the sentence location loss (default 1.0).
    #[arg(long)]
    pub lambda_sl: Option<f64>,
    /// Weight of the argument copy loss (default 0.9).
    #[arg(long)]
    pub lambda_ae: Option<f64>,
    /// Global gradient norm cap, or `none` (default 5.0).
    #[arg(long)]
    pub clip_norm: Option<Maybe<f64>>,
    /// Epochs without dev improvement before stopping, or `none` (default none).
    #[arg(long)]
    pub patience: Option<Maybe<usize>>,
    /// Stop once dev F1 reaches this value, or `none` (default none).
    #[arg(long)]
    pub target_f1: Option<Maybe<f64>>,
    /// Detection threshold used for dev scoring (default 0.5).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Records read per document and type, at most (default 8).
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Worker threads for dev scoring; 0 uses every core (default 0).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// key = value settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Documents to read (JSONL; gold events, if any, are ignored).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory; receives predictions.jsonl, throughput.json and config.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Detection threshold (default: the checkpoint's, else 0.5).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Records read per document and type, at most (default: the checkpoint's, else 8).
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Worker threads; 0 uses every core (default 0).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// key = value settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Predictions (JSONL).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Gold corpus (JSONL).
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Event schema (JSON).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Output directory; receives report.json, report.txt and config.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// throughput.json written by `extract`, or `none`.
    #[arg(long)]
    pub throughput: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Extract(a) => commands::extract(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("docee: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
