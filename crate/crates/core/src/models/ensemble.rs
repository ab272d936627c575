use crate::corpus::EncodedBatch;
use crate::error::{Result, TensorError};
use crate::tensor::{Scalar, Tensor};

use super::{Architecture, Model, NetworkConfig, Prediction, VoteMode};

/// Trained members combined with fixed, non-trainable weights.
#[derive(Clone, Debug)]
pub struct Ensemble<T: Scalar = f32> {
    members: Vec<Model<T>>,
    weights: Vec<f64>,
    mode: VoteMode,
}

impl<T: Scalar> Ensemble<T> {
    /// `weights` must be non-negative with a positive sum; they are
    /// normalized to sum to one.
    pub fn new(members: Vec<Model<T>>, weights: Vec<f64>, mode: VoteMode) -> Result<Self> {
        let mut e = Self::with_weights(members, weights, mode)?;
        let total: f64 = e.weights.iter().sum();
        for w in &mut e.weights {
            *w /= total;
        }
        Ok(e)
    }

    /// Takes weights that already sum to one (within 1e-9) as they are, so a
    /// stored ensemble reloads with bit-identical weights.
    pub fn from_normalized(members: Vec<Model<T>>, weights: Vec<f64>, mode: VoteMode) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(TensorError::Invalid(format!("ensemble weights sum to {total}, not 1")));
        }
        Self::with_weights(members, weights, mode)
    }

    fn with_weights(members: Vec<Model<T>>, weights: Vec<f64>, mode: VoteMode) -> Result<Self> {
        if members.is_empty() {
            return Err(TensorError::Empty { op: "ensemble" });
        }
        if weights.len() != members.len() {
            return Err(TensorError::Invalid(format!(
                "{} weights for {} ensemble members",
                weights.len(),
                members.len()
            )));
        }
        let k = members[0].num_classes();
        if let Some(m) = members.iter().find(|m| m.num_classes() != k) {
            return Err(TensorError::ShapeMismatch {
                op: "ensemble",
                lhs: vec![k],
                rhs: vec![m.num_classes()],
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(TensorError::Invalid("ensemble weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(TensorError::Invalid("ensemble weights sum to zero".into()));
        }
        Ok(Self { members, weights, mode })
    }

    /// Equal weights.
    pub fn uniform(members: Vec<Model<T>>, mode: VoteMode) -> Result<Self> {
        let n = members.len();
        Self::new(members, vec![1.0; n], mode)
    }

    pub fn members(&self) -> &[Model<T>] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mode(&self) -> VoteMode {
        self.mode
    }

    pub fn num_classes(&self) -> usize {
        self.members[0].num_classes()
    }

    pub fn min_input_len(&self) -> usize {
        self.members.iter().map(Model::min_input_len).max().unwrap_or(1)
    }

    pub fn param_count(&self) -> usize {
        self.members.iter().map(Model::param_count).sum()
    }

    /// Combines member predictions.
    ///
    /// Soft voting averages probabilities with the weights. Hard voting
    /// gives each member's argmax its weight; the returned rows are the vote
    /// shares. Either way the label is the row argmax, lowest index on ties.
    pub fn combine(&self, member_predictions: &[Prediction]) -> Result<Prediction> {
        if member_predictions.len() != self.members.len() {
            return Err(TensorError::Invalid("one prediction per member is required".into()));
        }
        let shape = member_predictions[0].probs.shape().to_vec();
        let k = shape[1];
        let mut out = vec![0.0; shape.iter().product()];
        for (pred, &w) in member_predictions.iter().zip(&self.weights) {
            if pred.probs.shape() != shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "ensemble",
                    lhs: shape.clone(),
                    rhs: pred.probs.shape().to_vec(),
                });
            }
            match self.mode {
                VoteMode::Soft => {
                    for (o, &p) in out.iter_mut().zip(pred.probs.data()) {
                        *o += w * p;
                    }
                }
                VoteMode::Hard => {
                    for (row, &label) in out.chunks_mut(k).zip(&pred.labels) {
                        row[label] += w;
                    }
                }
            }
        }
        Ok(Prediction::from_probs(Tensor::new(shape, out)?))
    }

    /// Runs every member on the batch (each padded to its own minimum
    /// length) and combines the results.
    pub fn predict_batch(&self, batch: &EncodedBatch) -> Result<Prediction> {
        let preds = self.members.iter().map(|m| m.predict_batch(batch)).collect::<Result<Vec<_>>>()?;
        self.combine(&preds)
    }

    /// Runs every member on raw ids and combines the results.
    pub fn predict(&self, ids: &[usize], batch: usize, time: usize) -> Result<Prediction> {
        let preds = self.members.iter().map(|m| m.predict(ids, batch, time)).collect::<Result<Vec<_>>>()?;
        self.combine(&preds)
    }
}

/// Anything that labels encoded batches: one network or an ensemble.
#[derive(Clone, Debug)]
pub enum Classifier<T: Scalar = f32> {
    Single(Model<T>),
    Ensemble(Ensemble<T>),
}

impl<T: Scalar> Classifier<T> {
    pub fn predict_batch(&self, batch: &EncodedBatch) -> Result<Prediction> {
        match self {
            Classifier::Single(m) => m.predict_batch(batch),
            Classifier::Ensemble(e) => e.predict_batch(batch),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Classifier::Single(m) => m.num_classes(),
            Classifier::Ensemble(e) => e.num_classes(),
        }
    }

    pub fn min_input_len(&self) -> usize {
        match self {
            Classifier::Single(m) => m.min_input_len(),
            Classifier::Ensemble(e) => e.min_input_len(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Classifier::Single(m) => m.param_count(),
            Classifier::Ensemble(e) => e.param_count(),
        }
    }

    /// Vocabulary size the classifier was built for.
    pub fn vocab_size(&self) -> usize {
        self.networks()[0].vocab_size
    }

    pub fn networks(&self) -> Vec<&NetworkConfig> {
        match self {
            Classifier::Single(m) => vec![m.config()],
            Classifier::Ensemble(e) => e.members().iter().map(Model::config).collect(),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Classifier::Single(m) => Architecture::Network(m.config().clone()),
            Classifier::Ensemble(e) => Architecture::Ensemble {
                members: e.members().iter().map(|m| m.config().clone()).collect(),
                weights: e.weights().to_vec(),
                mode: e.mode(),
            },
        }
    }

    /// Every member model in order (one for a single network).
    pub fn models(&self) -> Vec<&Model<T>> {
        match self {
            Classifier::Single(m) => vec![m],
            Classifier::Ensemble(e) => e.members().iter().collect(),
        }
    }
}

impl<T: Scalar> From<Model<T>> for Classifier<T> {
    fn from(m: Model<T>) -> Self {
        Classifier::Single(m)
    }
}

impl<T: Scalar> From<Ensemble<T>> for Classifier<T> {
    fn from(e: Ensemble<T>) -> Self {
        Classifier::Ensemble(e)
    }
}
