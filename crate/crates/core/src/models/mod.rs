//! Network assembly: the concatenation model, the comparison baselines and
//! the weighted-voting ensemble.

mod config;
mod ensemble;

pub use config::{
    Architecture, ArchitectureDoc, ConvSpec, Dims, ModelKind, NetworkConfig, SubnetConfig, VoteMode, STRICT_CLASSES,
    SCHEMA_VERSION,
};
pub use ensemble::{Classifier, Ensemble};

use crate::corpus::EncodedBatch;
use crate::error::{Result, TensorError};
use crate::layers::{ConvBlock, Dense, Embedding, Lstm};
use crate::params::{Binding, Initializer, ParamStore};
use crate::tensor::{Activation, Graph, NodeId, Scalar, Tensor};

/// Predicted labels and the probability rows they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// `[B, K]`.
    pub probs: Tensor<f64>,
}

impl Prediction {
    pub fn from_probs(probs: Tensor<f64>) -> Self {
        let k = probs.shape()[1];
        let labels = probs.data().chunks(k).map(argmax).collect();
        Self { labels, probs }
    }

    /// Probability of the predicted label, per row.
    pub fn confidences(&self) -> Vec<f64> {
        let k = self.probs.shape()[1];
        self.probs.data().chunks(k).zip(&self.labels).map(|(row, &l)| row[l]).collect()
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<V: PartialOrd + Copy>(row: &[V]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
enum Branch {
    Textcnn {
        blocks: Vec<ConvBlock>,
        /// Zero steps appended so every stacked convolution has a window.
        min_time: usize,
    },
    Lstm(Lstm),
    Bilstm {
        fwd: Lstm,
        bwd: Lstm,
    },
    Vgg {
        blocks: Vec<ConvBlock>,
        pool_every: usize,
        pool_window: usize,
        pool_stride: usize,
    },
}

/// Loss, accuracy count and parameter gradients for one batch.
#[derive(Clone, Debug)]
pub struct BatchGradients<T: Scalar> {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub correct: usize,
    /// One gradient per parameter tensor, in store order.
    pub grads: Vec<Vec<T>>,
}

/// A single network: embedding, one or more parallel sub-networks whose
/// features are joined, and a dense head ending in a softmax.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    config: NetworkConfig,
    params: ParamStore<T>,
    embedding: Embedding,
    branches: Vec<Branch>,
    head: Vec<Dense>,
}

impl<T: Scalar> Model<T> {
    /// Builds the network described by `config` with parameters drawn from
    /// `seed`. Identical inputs give identical parameters.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let embedding = Embedding::new(&mut store, &mut init, "embedding", config.vocab_size, config.embed_dim)?;
        let mut branches = Vec::with_capacity(config.subnets.len());
        for (i, sub) in config.subnets.iter().enumerate() {
            let prefix = format!("branch{i}.{}", sub.kind_name());
            let conv_stack = |store: &mut ParamStore<T>, init: &mut Initializer, layers: &[ConvSpec]| {
                let mut input = config.embed_dim;
                let mut blocks = Vec::with_capacity(layers.len());
                for (j, l) in layers.iter().enumerate() {
                    blocks.push(ConvBlock::new(store, init, &format!("{prefix}.conv{j}"), input, l.filters, l.width)?);
                    input = l.filters;
                }
                Ok::<_, TensorError>(blocks)
            };
            let branch = match sub {
                SubnetConfig::Textcnn { layers } => Branch::Textcnn {
                    blocks: conv_stack(&mut store, &mut init, layers)?,
                    min_time: sub.min_time(),
                },
                SubnetConfig::Lstm { hidden } => {
                    Branch::Lstm(Lstm::new(&mut store, &mut init, &prefix, config.embed_dim, *hidden)?)
                }
                SubnetConfig::Bilstm { hidden } => Branch::Bilstm {
                    fwd: Lstm::new(&mut store, &mut init, &format!("{prefix}.fwd"), config.embed_dim, *hidden)?,
                    bwd: Lstm::new(&mut store, &mut init, &format!("{prefix}.bwd"), config.embed_dim, *hidden)?,
                },
                SubnetConfig::Vgg {
                    layers,
                    pool_every,
                    pool_window,
                    pool_stride,
                } => Branch::Vgg {
                    blocks: conv_stack(&mut store, &mut init, layers)?,
                    pool_every: *pool_every,
                    pool_window: *pool_window,
                    pool_stride: *pool_stride,
                },
            };
            branches.push(branch);
        }
        let mut head = Vec::with_capacity(config.head_hidden.len() + 1);
        let mut width = config.feature_width();
        for (j, &h) in config.head_hidden.iter().enumerate() {
            head.push(Dense::new(&mut store, &mut init, &format!("head.hidden{j}"), width, h, Some(Activation::Relu))?);
            width = h;
        }
        head.push(Dense::new(&mut store, &mut init, "head.output", width, config.num_classes, None)?);
        Ok(Self {
            config: config.clone(),
            params: store,
            embedding,
            branches,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Shortest time extent [`Model::logits_graph`] accepts.
    pub fn min_input_len(&self) -> usize {
        self.config.min_input_len()
    }

    /// Exact number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Same network with every parameter converted to another element type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut params = ParamStore::new();
        for (name, t) in self.params.iter() {
            params.add(name, t.cast());
        }
        Model {
            config: self.config.clone(),
            params,
            embedding: self.embedding.clone(),
            branches: self.branches.clone(),
            head: self.head.clone(),
        }
    }

    /// Records the forward pass for row-major `ids: [batch, time]` and
    /// returns the `[batch, K]` logits node.
    pub fn logits_graph(
        &self,
        g: &mut Graph<T>,
        p: &Binding,
        ids: &[usize],
        batch: usize,
        time: usize,
    ) -> Result<NodeId> {
        let need = self.min_input_len();
        if time < need {
            return Err(TensorError::TooShort {
                op: "model_forward",
                time,
                window: need,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(TensorError::IndexOutOfRange {
                op: "model_forward",
                index: bad,
                bound: self.config.vocab_size,
            });
        }
        let x = self.embedding.forward(g, p, ids, batch, time)?;
        let mut features = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let f = match branch {
                Branch::Textcnn { blocks, min_time } => {
                    let mut h = g.pad_time(x, *min_time)?;
                    for b in blocks {
                        h = b.forward(g, p, h)?;
                    }
                    g.global_max_pool(h)?
                }
                Branch::Lstm(lstm) => lstm.forward(g, p, x, false)?.last,
                Branch::Bilstm { fwd, bwd } => {
                    let f = fwd.forward(g, p, x, false)?;
                    let b = bwd.forward(g, p, x, true)?;
                    g.concat(&[f.last, b.last])?
                }
                Branch::Vgg {
                    blocks,
                    pool_every,
                    pool_window,
                    pool_stride,
                } => {
                    let mut h = x;
                    for (j, b) in blocks.iter().enumerate() {
                        h = b.forward(g, p, h)?;
                        if (j + 1) % pool_every == 0 {
                            h = g.max_pool1d(h, *pool_window, *pool_stride)?;
                        }
                    }
                    g.global_max_pool(h)?
                }
            };
            features.push(f);
        }
        let mut h = if features.len() == 1 { features[0] } else { g.concat(&features)? };
        for d in &self.head {
            h = d.forward(g, p, h)?;
        }
        Ok(h)
    }

    fn run(&self, ids: &[usize], batch: usize, time: usize, check_finite: bool) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        g.set_check_finite(check_finite);
        let p = self.params.bind(&mut g, false);
        let logits = self.logits_graph(&mut g, &p, ids, batch, time)?;
        let probs = g.softmax(logits)?;
        Ok(g.value(probs)?.clone())
    }

    /// Class probabilities `[batch, K]` for `ids: [batch, time]`.
    pub fn forward(&self, ids: &[usize], batch: usize, time: usize) -> Result<Tensor<T>> {
        self.run(ids, batch, time, true)
    }

    /// Like [`Model::forward`] without the per-op finite-value guard.
    pub fn forward_unchecked(&self, ids: &[usize], batch: usize, time: usize) -> Result<Tensor<T>> {
        self.run(ids, batch, time, false)
    }

    /// Labels (argmax, lowest index on ties) and probabilities.
    pub fn predict(&self, ids: &[usize], batch: usize, time: usize) -> Result<Prediction> {
        Ok(Prediction::from_probs(self.forward(ids, batch, time)?.cast()))
    }

    /// Predicts an encoded batch, padding it to the minimum length first.
    pub fn predict_batch(&self, batch: &EncodedBatch) -> Result<Prediction> {
        let b = batch.pad_to(self.min_input_len());
        self.predict(&b.ids, b.batch, b.time)
    }

    /// Mean cross-entropy of an encoded batch and its gradient with respect
    /// to every parameter.
    pub fn gradients(&self, batch: &EncodedBatch) -> Result<BatchGradients<T>> {
        let b = batch.pad_to(self.min_input_len());
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, true);
        let logits = self.logits_graph(&mut g, &p, &b.ids, b.batch, b.time)?;
        let probs = g.softmax(logits)?;
        let loss = g.cross_entropy(probs, &b.labels)?;
        g.backward(loss)?;
        let k = self.num_classes();
        let correct = g
            .value(probs)?
            .data()
            .chunks(k)
            .zip(&b.labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        let grads = p
            .nodes()
            .iter()
            .map(|&n| g.grad(n).map(<[T]>::to_vec).ok_or(TensorError::DetachedNode))
            .collect::<Result<_>>()?;
        Ok(BatchGradients {
            loss: g.value(loss)?.data()[0].as_f64(),
            correct,
            grads,
        })
    }

    /// Bytes needed for one forward pass on a `[batch, time]` input.
    ///
    /// Counts every tensor held by the forward graph (the bound parameter
    /// copies plus every intermediate activation, all of which stay alive
    /// until the graph is dropped) times the element size.
    pub fn memory_estimate(&self, batch: usize, time: usize) -> Result<usize> {
        let time = time.max(self.min_input_len());
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let ids = vec![crate::corpus::UNK_INDEX; batch * time];
        let logits = self.logits_graph(&mut g, &p, &ids, batch, time)?;
        g.softmax(logits)?;
        Ok(g.activation_elements() * std::mem::size_of::<T>())
    }
}
