//! Mini-batch training, evaluation and ensemble fitting.

use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedBatch, EncodedRecord};
use crate::error::{TensorError, TrainError};
use crate::models::{Classifier, Ensemble, Model, NetworkConfig, Prediction, VoteMode};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    /// Heavy-ball SGD with momentum 0.9.
    SgdMomentum,
}

impl FromStr for OptimizerKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd-momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            other => Err(TrainError::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Element type used for the optimization arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(TrainError::Config(format!("unknown precision `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Seed for the batch order.
    pub seed: u64,
    pub precision: Precision,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Stop as soon as validation accuracy reaches this fraction.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            precision: Precision::F32,
            clip_norm: Some(5.0),
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate must be finite and ≥ 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be ≥ 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(TrainError::Config("clip norm must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Metrics for one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy over the epoch's batches, measured as they were trained.
    pub train_acc: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based; 0 if none ran).
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

impl History {
    /// Every field except wall-clock seconds, for determinism checks.
    pub fn without_timing(&self) -> Self {
        let mut h = self.clone();
        for e in &mut h.epochs {
            e.seconds = 0.0;
        }
        h
    }
}

enum Optimizer<T: Scalar> {
    Adam {
        m: Vec<Vec<T>>,
        v: Vec<Vec<T>>,
        step: i32,
    },
    Sgd {
        velocity: Vec<Vec<T>>,
    },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MOMENTUM: f64 = 0.9;

impl<T: Scalar> Optimizer<T> {
    fn new(kind: OptimizerKind, shapes: &[Tensor<T>]) -> Self {
        let zeros = || shapes.iter().map(|t| vec![T::zero(); t.numel()]).collect();
        match kind {
            OptimizerKind::Adam => Optimizer::Adam {
                m: zeros(),
                v: zeros(),
                step: 0,
            },
            OptimizerKind::SgdMomentum => Optimizer::Sgd { velocity: zeros() },
        }
    }

    fn step(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>], lr: f64) {
        let lr_t = T::from_f64(lr);
        match self {
            Optimizer::Adam { m, v, step } => {
                *step += 1;
                let (b1, b2) = (T::from_f64(ADAM_BETA1), T::from_f64(ADAM_BETA2));
                let c1 = T::from_f64(1.0 - ADAM_BETA1.powi(*step));
                let c2 = T::from_f64(1.0 - ADAM_BETA2.powi(*step));
                let eps = T::from_f64(ADAM_EPS);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
                    for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let update = lr_t * (*m / c1) / ((*v / c2).sqrt() + eps);
                        *p -= update;
                    }
                }
            }
            Optimizer::Sgd { velocity } => {
                let mu = T::from_f64(MOMENTUM);
                for ((p, g), vel) in params.iter_mut().zip(grads).zip(velocity) {
                    for ((p, &g), vel) in p.data_mut().iter_mut().zip(g).zip(vel) {
                        *vel = mu * *vel + g;
                        *p -= lr_t * *vel;
                    }
                }
            }
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|&g| {
            let g = g.as_f64();
            g * g
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::from_f64(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            *g *= s;
        }
    }
    norm
}

/// Training batches for one epoch: shuffle, sort windows of 16 batches by
/// length so batches hold similar lengths, then shuffle the batch order.
fn epoch_batches(data: &[EncodedRecord], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    for window in order.chunks_mut(batch_size * 16) {
        window.sort_by_key(|&i| data[i].ids.len());
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

fn diverged(epoch: usize, batch: usize, loss: f64) -> TrainError {
    TrainError::Divergence { epoch, batch, loss }
}

/// Trains `model` on `train` with mini-batch gradient descent on the
/// cross-entropy loss and returns the parameters from the epoch with the
/// best validation accuracy. `observer` sees each epoch record as it is
/// produced. With an empty `val`, training accuracy stands in for it.
pub fn train_with<T: Scalar>(
    mut model: Model<T>,
    train: &[EncodedRecord],
    val: &[EncodedRecord],
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(Model<T>, History), TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(config.optimizer, model.params().tensors());
    let mut history = History::default();
    let mut best: Option<(f64, Vec<Tensor<T>>)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (bi, idx) in epoch_batches(train, config.batch_size, &mut rng).iter().enumerate() {
            let batch = EncodedBatch::from_records(idx.iter().map(|&i| &train[i]), 1);
            let mut out = match model.gradients(&batch) {
                Ok(out) => out,
                Err(TensorError::NonFinite { .. }) => return Err(diverged(epoch, bi, f64::NAN)),
                Err(e) => return Err(e.into()),
            };
            if !out.loss.is_finite() {
                return Err(diverged(epoch, bi, out.loss));
            }
            if let Some(max) = config.clip_norm {
                let norm = clip_global_norm(&mut out.grads, max);
                if !norm.is_finite() {
                    return Err(diverged(epoch, bi, out.loss));
                }
            }
            opt.step(model.params_mut().tensors_mut(), &out.grads, config.learning_rate);
            if model.params().tensors().iter().any(|t| !t.all_finite()) {
                return Err(diverged(epoch, bi, out.loss));
            }
            loss_sum += out.loss * idx.len() as f64;
            correct += out.correct;
        }
        let n = train.len() as f64;
        let train_acc = correct as f64 / n;
        let val_acc = if val.is_empty() {
            train_acc
        } else {
            match evaluate(&Classifier::Single(model.clone()), val, config.batch_size.max(64)) {
                Ok(acc) => acc,
                Err(TrainError::Tensor(TensorError::NonFinite { .. })) => {
                    return Err(diverged(epoch, 0, f64::NAN))
                }
                Err(e) => return Err(e),
            }
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc,
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        observer(&record);
        history.epochs.push(record);
        if best.as_ref().map_or(true, |(b, _)| val_acc > *b) {
            best = Some((val_acc, model.params().tensors().to_vec()));
            history.best_epoch = epoch;
            history.best_val_acc = val_acc;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.target_accuracy.is_some_and(|t| val_acc >= t) || since_best >= config.patience.max(1) {
            break;
        }
    }
    if let Some((_, params)) = best {
        model.params_mut().tensors_mut().clone_from_slice(&params);
    }
    Ok((model, history))
}

pub fn train<T: Scalar>(
    model: Model<T>,
    train: &[EncodedRecord],
    val: &[EncodedRecord],
    config: &TrainConfig,
) -> Result<(Model<T>, History), TrainError> {
    train_with(model, train, val, config, &mut |_| {})
}

/// Builds a network from `seed` and trains it at the configured precision;
/// the result is always returned at 32-bit.
pub fn fit_network(
    network: &NetworkConfig,
    seed: u64,
    train_data: &[EncodedRecord],
    val: &[EncodedRecord],
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(Model<f32>, History), TrainError> {
    match config.precision {
        Precision::F32 => train_with(Model::<f32>::build(network, seed)?, train_data, val, config, observer),
        Precision::F64 => {
            let (m, h) = train_with(Model::<f64>::build(network, seed)?, train_data, val, config, observer)?;
            Ok((m.cast(), h))
        }
    }
}

/// Weights proportional to each member's validation accuracy, normalized;
/// uniform if every accuracy is zero.
pub fn accuracy_weights(accuracies: &[f64]) -> Vec<f64> {
    let total: f64 = accuracies.iter().sum();
    if total > 0.0 {
        accuracies.iter().map(|a| a / total).collect()
    } else {
        vec![1.0 / accuracies.len() as f64; accuracies.len()]
    }
}

/// Combines already trained members, weighting each by its accuracy on `val`.
pub fn weighted_ensemble<T: Scalar>(
    members: Vec<Model<T>>,
    val: &[EncodedRecord],
    mode: VoteMode,
    batch_size: usize,
) -> Result<(Ensemble<T>, Vec<f64>), TrainError> {
    let accs = members
        .iter()
        .map(|m| evaluate(&Classifier::Single(m.clone()), val, batch_size))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((Ensemble::new(members, accuracy_weights(&accs), mode)?, accs))
}

/// Record order used for inference: by length, then content. Batches built
/// from it do not depend on the order the caller supplied.
fn canonical_order(data: &[EncodedRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&data[a], &data[b]);
        x.ids.len().cmp(&y.ids.len()).then_with(|| x.ids.cmp(&y.ids))
    });
    order
}

/// Predicts every record, batching in canonical order. `threads > 1`
/// shares the batches among scoped worker threads; results do not depend
/// on the thread count.
pub fn predict_records<T: Scalar>(
    classifier: &Classifier<T>,
    data: &[EncodedRecord],
    batch_size: usize,
    threads: usize,
) -> Result<Prediction, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    if batch_size == 0 {
        return Err(TrainError::Config("batch size must be ≥ 1".into()));
    }
    let order = canonical_order(data);
    let chunks: Vec<&[usize]> = order.chunks(batch_size).collect();
    let run = |chunk: &[usize]| {
        let batch = EncodedBatch::from_records(chunk.iter().map(|&i| &data[i]), 1);
        classifier.predict_batch(&batch)
    };
    let threads = threads.clamp(1, chunks.len());
    let preds: Vec<Prediction> = if threads == 1 {
        chunks.iter().map(|c| run(c)).collect::<Result<_, _>>()?
    } else {
        let per = chunks.len().div_ceil(threads);
        let parts: Vec<Result<Vec<Prediction>, TensorError>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .chunks(per)
                .map(|group| s.spawn(move || group.iter().map(|c| run(c)).collect::<Result<Vec<_>, _>>()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("prediction worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(chunks.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let k = classifier.num_classes();
    let mut labels = vec![0; data.len()];
    let mut probs = vec![0.0; data.len() * k];
    let mut pos = order.iter();
    for p in &preds {
        for (row, &label) in p.probs.data().chunks(k).zip(&p.labels) {
            let i = *pos.next().expect("one prediction per record");
            labels[i] = label;
            probs[i * k..(i + 1) * k].copy_from_slice(row);
        }
    }
    Ok(Prediction {
        labels,
        probs: Tensor::new([data.len(), k], probs)?,
    })
}

/// Fraction of predictions equal to their labels.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64, TrainError> {
    if predicted.is_empty() || predicted.len() != labels.len() {
        return Err(TrainError::EmptyData);
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Test accuracy of a network or ensemble.
pub fn evaluate<T: Scalar>(
    classifier: &Classifier<T>,
    data: &[EncodedRecord],
    batch_size: usize,
) -> Result<f64, TrainError> {
    let pred = predict_records(classifier, data, batch_size, 1)?;
    let labels: Vec<usize> = data.iter().map(|r| r.label).collect();
    accuracy(&pred.labels, &labels)
}
