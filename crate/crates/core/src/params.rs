//! Named parameter storage and seeded initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces every tensor, checking names and shapes line up.
    pub fn load(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(TensorError::Invalid(format!(
                "expected {} parameter tensors, got {}",
                self.tensors.len(),
                named.len()
            )));
        }
        for ((name, t), (want_name, want)) in named.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != want_name || t.shape() != want.shape() {
                return Err(TensorError::Invalid(format!(
                    "parameter `{name}` {:?} does not match `{want_name}` {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
        }
        self.tensors = named.into_iter().map(|(_, t)| t).collect();
        Ok(())
    }

    /// Records every tensor on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Binding {
        Binding {
            nodes: self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect(),
        }
    }
}

/// Graph nodes holding one forward pass's copy of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Binding {
    nodes: Vec<NodeId>,
}

impl Binding {
    /// Binds parameters to caller-made nodes, in store order.
    pub fn from_nodes(nodes: Vec<NodeId>) -> Self {
        Self { nodes }
    }

    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }
}

/// Seeded parameter initializer.
///
/// Weights are drawn from `uniform(-r, r)` with `r = sqrt(6 / (fan_in +
/// fan_out))`; biases start at zero.
#[derive(Clone, Debug)]
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn bound(fan_in: usize, fan_out: usize) -> f64 {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }

    pub fn uniform<T: Scalar>(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<Tensor<T>> {
        let r = Self::bound(fan_in, fan_out);
        let n = shape.iter().product();
        let values = (0..n).map(|_| T::from_f64(self.rng.gen_range(-r..r))).collect();
        Tensor::new(shape.to_vec(), values)
    }
}
