//! `sgcn`: train, evaluate, and inspect self-determined GCN relation
//! extraction models from the command line.
//!
//! Exit codes: 0 success, 1 failed check or metric, 2 bad input. All state
//! comes from flags and the config file; the only environment variable read
//! is `SGCN_DATA_DIR`, a fallback for `--data-dir`.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgcn::model::{AblationFlags, AdjacencyMode};
use sgcn::scalar::Precision;
use sgcn::train::TrainError;

pub const DATA_DIR_ENV: &str = "SGCN_DATA_DIR";

/// Error carrying its process exit code: 1 for failed checks or metrics,
/// 2 for input problems.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn check(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<sgcn::data::DataError> for CliError {
    fn from(e: sgcn::data::DataError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<sgcn::model::ModelError> for CliError {
    fn from(e: sgcn::model::ModelError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<sgcn::eval::EvalError> for CliError {
    fn from(e: sgcn::eval::EvalError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            // A numeric abort is a failed run, not a usage mistake.
            TrainError::NonFiniteGrad(_) | TrainError::Tape(_) => CliError::check(e.to_string()),
            other => CliError::input(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "sgcn",
    version,
    about = "Self-determined graph convolutional networks for relation extraction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint plus an epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset file (tab-separated P R F1).
    Eval(EvalArgs),
    /// Print one predicted relation per input sentence.
    Predict(PredictArgs),
    /// Generate the synthetic long-distance relation dataset.
    GenSynthetic(GenArgs),
    /// Export one learned adjacency matrix as CSV with token labels.
    ExportAdjacency(ExportArgs),
    /// Finite-difference check of the gradients on a toy model.
    Gradcheck(GradcheckArgs),
}

/// Flags shared by commands that build a model or training run.
#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for parameter init, shuffling, and dropout.
    #[arg(long)]
    seed: Option<u64>,
    /// Floating-point width.
    #[arg(long, value_parser = config::parse_precision)]
    precision: Option<Precision>,
    /// Adjacency normalization: relu-mean or softmax.
    #[arg(long = "adjacency-norm", value_parser = config::parse_adjacency)]
    adjacency_norm: Option<AdjacencyMode>,
    /// Component removal: none, no_sgcn, no_lstm, or no_layer_agg.
    #[arg(long, value_parser = config::parse_ablation)]
    ablation: Option<AblationFlags>,
    /// SGCN layer count k (default 2).
    #[arg(long)]
    layers: Option<usize>,
    /// Attention head count h (default 3).
    #[arg(long)]
    heads: Option<usize>,
}

impl CommonOpts {
    fn overrides(&self) -> config::Overrides {
        config::Overrides {
            seed: self.seed,
            precision: self.precision,
            adjacency_norm: self.adjacency_norm,
            ablation: self.ablation,
            layers: self.layers,
            heads: self.heads,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Directory holding train.json and dev.json (or $SGCN_DATA_DIR).
    #[arg(long = "data-dir")]
    data_dir: Option<PathBuf>,
    /// Where the checkpoint and epoch log are written.
    #[arg(long = "out-dir", default_value = "out")]
    out_dir: PathBuf,
    /// Pretrained word vectors (token then values, one entry per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `sgcn train`.
    checkpoint: PathBuf,
    /// Dataset file to score.
    data: PathBuf,
    /// Load width: defaults to the width the checkpoint was saved at.
    #[arg(long, value_parser = config::parse_precision)]
    precision: Option<Precision>,
    /// Allow loading 64-bit checkpoints as 32-bit (loses precision).
    #[arg(long)]
    narrow: bool,
}

#[derive(Args)]
struct PredictArgs {
    checkpoint: PathBuf,
    data: PathBuf,
    #[arg(long, value_parser = config::parse_precision)]
    precision: Option<Precision>,
    #[arg(long)]
    narrow: bool,
}

#[derive(Args)]
struct GenArgs {
    /// Generator settings (num_examples, vocab_size, min_len, max_len,
    /// num_relations, trigger_distance, n_train, n_dev, n_test).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "out-dir", default_value = "data")]
    out_dir: PathBuf,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExportArgs {
    checkpoint: PathBuf,
    /// Dataset file; the first sentence is exported.
    sentence_file: PathBuf,
    /// Layer index, 0-based (< k).
    #[arg(long, default_value_t = 0)]
    layer: usize,
    /// Head index, 0-based (< h).
    #[arg(long, default_value_t = 0)]
    head: usize,
    /// Output CSV path.
    #[arg(long, default_value = "adjacency.csv")]
    out: PathBuf,
    #[arg(long, value_parser = config::parse_precision)]
    precision: Option<Precision>,
    #[arg(long)]
    narrow: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Optional config; only `seed` is consulted (the model is fixed).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Test fixture: corrupt the analytic gradients so the check must fail.
    #[arg(long = "corrupt-backward", hide = true)]
    corrupt_backward: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Predict(args) => commands::eval::run_predict(args),
        Command::GenSynthetic(args) => commands::gen_synthetic::run(args),
        Command::ExportAdjacency(args) => commands::export_adjacency::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
