//! Command-line front end: corpus preparation, training, evaluation,
//! prediction, benchmarking and model comparison.

mod commands;
mod settings;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use concat_textclass::{CorpusError, TensorError, TrainError};

use commands::{BenchArgs, CompareArgs, EvalArgs, PredictArgs, PrepareArgs, SynthArgs, TrainArgs, VocabArgs};

/// Character-level text classification with concatenation-fused models.
#[derive(Parser)]
#[command(name = "concat-textclass", version, propagate_version = true)]
#[command(after_help = "Exit status: 0 success, 1 usage error, 2 data error, 3 training diverged.\n\
Every subcommand takes --config FILE, a JSON object keyed by flag name; flags override it.\n\
CONCAT_TEXTCLASS_THREADS caps the worker threads used by eval and predict.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a character vocabulary from a corpus file
    Vocab(VocabArgs),
    /// Filter by length, bucket into the three data sets and split each
    Prepare(PrepareArgs),
    /// Train a model and write a checkpoint with per-epoch metrics
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a labeled corpus file
    Eval(EvalArgs),
    /// Label every record of a corpus file
    Predict(PredictArgs),
    /// Time checkpoint loading plus prediction, excluding data reading
    Bench(BenchArgs),
    /// Train and score several model kinds over several seeds
    Compare(CompareArgs),
    /// Write a synthetic corpus with planted local and long-range cues
    Synth(SynthArgs),
}

/// Why a command failed, mapped to the exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Diverged(m) => m,
        }
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Invalid(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Invalid(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => Failure::Diverged(e.to_string()),
            TrainError::Config(_) => Failure::Usage(e.to_string()),
            TrainError::Tensor(t) => t.into(),
            TrainError::Corpus(c) => c.into(),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn run() -> Result<(), Failure> {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Ok(()),
                _ => Err(Failure::Usage(String::new())),
            };
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Failure::Usage(e.to_string()))?;
    let (_, sub) = matches.subcommand().expect("a subcommand is required");
    match cli.command {
        Command::Vocab(a) => commands::vocab(a, sub),
        Command::Prepare(a) => commands::prepare(a, sub),
        Command::Train(a) => commands::train(a, sub),
        Command::Eval(a) => commands::eval(a, sub),
        Command::Predict(a) => commands::predict(a, sub),
        Command::Bench(a) => commands::bench(a, sub),
        Command::Compare(a) => commands::compare(a, sub),
        Command::Synth(a) => commands::synth(a, sub),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message().is_empty() {
                eprintln!("error: {}", f.message());
            }
            ExitCode::from(f.code())
        }
    }
}
