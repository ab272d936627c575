use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the tensor engine, layers and models.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: time extent {time} shorter than window {window}")]
    TooShort {
        op: &'static str,
        time: usize,
        window: usize,
    },
    #[error("{op}: index {index} out of range for extent {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("node does not belong to this graph")]
    DetachedNode,
    #[error("unknown activation kind `{0}`")]
    UnknownActivation(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Errors raised by corpus ingestion and encoding.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: no well-formed `label<TAB>text` lines ({malformed} malformed)")]
    NoRecords { path: PathBuf, malformed: usize },
    #[error("{path}:{line}: {reason}")]
    BadVocabFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("label `{0}` is not in the frozen label table")]
    UnknownLabel(String),
    #[error("class `{label}` has {count} record(s); at least 2 are needed to split")]
    ClassTooSmall { label: String, count: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Errors raised by training, evaluation, checkpoints and benchmarking.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("nothing to evaluate")]
    EmptyData,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
