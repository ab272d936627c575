//! Character-level text classification with a concatenation-fused model:
//! several convolutional and recurrent sub-networks read one shared
//! character embedding, their pooled features are joined end to end, and a
//! trainable dense head maps the joined vector to class probabilities.
//!
//! The crate also carries the comparison baselines (a two-layer TextCNN, a
//! Bi-LSTM, a VGG-style deep CNN and a weighted-voting ensemble), the corpus
//! pipeline, training, checkpoints and a prediction benchmark.

pub mod bench;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod layers;
pub mod models;
pub mod params;
pub mod report;
pub mod train;
pub mod tensor;

pub use error::{CorpusError, TensorError, TrainError};
pub use tensor::{grad_check, Activation, GradCheckReport, Graph, NodeId, Scalar, Tensor};
