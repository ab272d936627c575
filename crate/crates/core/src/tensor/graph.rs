use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{gemm, View};
use super::{Scalar, Tensor};
use crate::error::{Result, TensorError};

/// Probability floor used by [`Graph::cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: u64,
    index: usize,
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `max(0, x)`; the derivative at exactly 0 is taken as 0.
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn slope<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(TensorError::UnknownActivation(other.to_string())),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddBias { x: usize, bias: usize },
    Act { x: usize, kind: Activation },
    Conv1d { x: usize, kernel: usize, bias: usize },
    /// Pooling ops keep, per output element, the flat input index that won.
    MaxPool { x: usize, argmax: Vec<usize> },
    Concat { parts: Vec<usize> },
    Softmax { x: usize },
    CrossEntropy { probs: usize, labels: Vec<usize> },
    Embedding { table: usize, ids: Vec<usize>, pad: Option<usize> },
    Reshape { x: usize },
    SliceTime { x: usize, t: usize },
    StackTime { parts: Vec<usize> },
    SliceLast { x: usize, start: usize },
    PadTime { x: usize },
    Sum { x: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op,
}

/// A differentiation tape.
///
/// Nodes are appended in creation order, so every op's inputs precede it.
/// [`Graph::backward`] walks the records once, newest first, and leaves
/// gradients on the leaf tensors that asked for them.
#[derive(Debug)]
pub struct Graph<T: Scalar = f32> {
    tag: u64,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a shape into `(rows, last)` where `last` is the trailing extent.
fn rows_last(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((&n, lead)) => (lead.iter().product(), n),
        None => (1, 1),
    }
}

/// Views a rank-2 `[T, C]` or rank-3 `[B, T, C]` shape as `(B, T, C)`.
fn seq_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, c] => Ok((1, t, c)),
        [b, t, c] => Ok((b, t, c)),
        _ => Err(TensorError::Rank {
            op,
            expected: 3,
            shape: shape.to_vec(),
        }),
    }
}

/// Output shape for a sequence op that maps `(T, C)` to `(t, c)`.
fn seq_shape(input: &[usize], b: usize, t: usize, c: usize) -> Vec<usize> {
    if input.len() == 2 {
        vec![t, c]
    } else {
        vec![b, t, c]
    }
}

fn zeros<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::zero(); n]
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], idx: usize, len: usize) -> &mut [T] {
    grads[idx].get_or_insert_with(|| zeros(len)).as_mut_slice()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            tag: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            check_finite: true,
        }
    }

    /// Enables or disables the non-finite value guard run after every op.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total number of values held across all recorded tensors.
    pub fn activation_elements(&self) -> usize {
        self.nodes.iter().map(|n| n.value.numel()).sum()
    }

    fn index(&self, id: NodeId) -> Result<usize> {
        if id.graph != self.tag || id.index >= self.nodes.len() {
            return Err(TensorError::DetachedNode);
        }
        Ok(id.index)
    }

    fn node(&self, id: NodeId) -> Result<(usize, &Tensor<T>)> {
        let i = self.index(id)?;
        Ok((i, &self.nodes[i].value))
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op, inputs: &[usize]) -> Result<NodeId> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_raw(value, requires_grad, op))
    }

    fn push_raw(&mut self, value: Tensor<T>, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        NodeId {
            graph: self.tag,
            index: self.nodes.len() - 1,
        }
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push_raw(value, requires_grad, Op::Leaf)
    }

    /// Validates `shape`/`values` and records the result as a leaf.
    pub fn tensor(&mut self, shape: impl Into<Vec<usize>>, values: &[T], requires_grad: bool) -> Result<NodeId> {
        let t = Tensor::new(shape, values.to_vec())?;
        Ok(self.leaf(t, requires_grad))
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>> {
        Ok(self.node(id)?.1)
    }

    pub fn requires_grad(&self, id: NodeId) -> Result<bool> {
        Ok(self.nodes[self.index(id)?].requires_grad)
    }

    /// Gradient left on a leaf by the last [`Graph::backward`] call.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        let i = self.index(id).ok()?;
        self.grads.get(i)?.as_deref()
    }

    pub fn grad_tensor(&self, id: NodeId) -> Option<Tensor<T>> {
        let g = self.grad(id)?;
        Some(Tensor::from_parts(self.nodes[id.index].value.shape().to_vec(), g.to_vec()))
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ai, at) = self.node(a)?;
        let (bi, bt) = self.node(b)?;
        let (&[m, k], &[k2, n]) = (at.shape(), bt.shape()) else {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: at.shape().to_vec(),
                rhs: bt.shape().to_vec(),
            });
        };
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: at.shape().to_vec(),
                rhs: bt.shape().to_vec(),
            });
        }
        let mut out = zeros(m * n);
        gemm(at.data(), View::dense(m, k), bt.data(), View::dense(k, n), T::zero(), &mut out, View::dense(m, n));
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(ai, bi), &[ai, bi])
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(usize, usize)> {
        let (ai, at) = self.node(a)?;
        let (bi, bt) = self.node(b)?;
        if at.shape() != bt.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: at.shape().to_vec(),
                rhs: bt.shape().to_vec(),
            });
        }
        Ok((ai, bi))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ai, bi) = self.same_shape("add", a, b)?;
        let (at, bt) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let out = at.data().iter().zip(bt.data()).map(|(&x, &y)| x + y).collect();
        let shape = at.shape().to_vec();
        self.push("add", Tensor::from_parts(shape, out), Op::Add(ai, bi), &[ai, bi])
    }

    /// Elementwise (Hadamard) product of two same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ai, bi) = self.same_shape("mul", a, b)?;
        let (at, bt) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let out = at.data().iter().zip(bt.data()).map(|(&x, &y)| x * y).collect();
        let shape = at.shape().to_vec();
        self.push("mul", Tensor::from_parts(shape, out), Op::Mul(ai, bi), &[ai, bi])
    }

    /// Adds a `[n]` vector to every row of a `[..., n]` tensor.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xi, xt) = self.node(x)?;
        let (bi, bt) = self.node(bias)?;
        let (_, n) = rows_last(xt.shape());
        if bt.shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: xt.shape().to_vec(),
                rhs: bt.shape().to_vec(),
            });
        }
        let mut out = xt.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            for (v, &b) in row.iter_mut().zip(bt.data()) {
                *v += b;
            }
        }
        let shape = xt.shape().to_vec();
        self.push("add_bias", Tensor::from_parts(shape, out), Op::AddBias { x: xi, bias: bi }, &[xi, bi])
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> Result<NodeId> {
        let (xi, xt) = self.node(x)?;
        let out = xt.data().iter().map(|&v| kind.apply(v)).collect();
        let shape = xt.shape().to_vec();
        self.push(kind.name(), Tensor::from_parts(shape, out), Op::Act { x: xi, kind }, &[xi])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.activation(x, Activation::Sigmoid)
    }

    /// Valid (unpadded) 1-D cross-correlation along time.
    ///
    /// `x` is `[B, T, C_in]` (or `[T, C_in]`), `kernel` is `[C_out, C_in, h]`
    /// and `bias` is `[C_out]`. The result is `[B, T-h+1, C_out]`.
    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xi, xt) = self.node(x)?;
        let (ki, kt) = self.node(kernel)?;
        let (bi, bt) = self.node(bias)?;
        let (batch, time, c_in) = seq_dims("conv1d", xt.shape())?;
        let &[c_out, kc, width] = kt.shape() else {
            return Err(TensorError::Rank {
                op: "conv1d",
                expected: 3,
                shape: kt.shape().to_vec(),
            });
        };
        if kc != c_in || bt.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: xt.shape().to_vec(),
                rhs: kt.shape().to_vec(),
            });
        }
        if time < width {
            return Err(TensorError::TooShort {
                op: "conv1d",
                time,
                window: width,
            });
        }
        let t_out = time - width + 1;
        // One product over every window start in the flattened batch; rows
        // whose window straddles two sequences are discarded afterwards.
        let rows = batch * time - width + 1;
        let mut full = zeros(rows * c_out);
        for j in 0..width {
            let xv = View {
                offset: j * c_in,
                rows,
                cols: c_in,
                rs: c_in,
                cs: 1,
            };
            let kv = View {
                offset: j,
                rows: c_in,
                cols: c_out,
                rs: width,
                cs: c_in * width,
            };
            gemm(xt.data(), xv, kt.data(), kv, T::one(), &mut full, View::dense(rows, c_out));
        }
        let mut out = Vec::with_capacity(batch * t_out * c_out);
        for b in 0..batch {
            let start = b * time * c_out;
            out.extend_from_slice(&full[start..start + t_out * c_out]);
        }
        for row in out.chunks_exact_mut(c_out) {
            for (v, &b) in row.iter_mut().zip(bt.data()) {
                *v += b;
            }
        }
        let shape = seq_shape(xt.shape(), batch, t_out, c_out);
        self.push(
            "conv1d",
            Tensor::from_parts(shape, out),
            Op::Conv1d {
                x: xi,
                kernel: ki,
                bias: bi,
            },
            &[xi, ki, bi],
        )
    }

    /// Windowed maximum along time for `[B, T, C]` (or `[T, C]`) input.
    ///
    /// On ties the earliest position wins and receives the gradient.
    pub fn max_pool1d(&mut self, x: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let (xi, xt) = self.node(x)?;
        let (batch, time, ch) = seq_dims("max_pool1d", xt.shape())?;
        if window == 0 || stride == 0 {
            return Err(TensorError::Invalid("max_pool1d window and stride must be ≥ 1".into()));
        }
        if time < window {
            return Err(TensorError::TooShort {
                op: "max_pool1d",
                time,
                window,
            });
        }
        let t_out = (time - window) / stride + 1;
        let data = xt.data();
        let mut out = Vec::with_capacity(batch * t_out * ch);
        let mut argmax = Vec::with_capacity(batch * t_out * ch);
        for b in 0..batch {
            for to in 0..t_out {
                for c in 0..ch {
                    let mut best = (b * time + to * stride) * ch + c;
                    for w in 1..window {
                        let idx = (b * time + to * stride + w) * ch + c;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let shape = seq_shape(xt.shape(), batch, t_out, ch);
        self.push("max_pool1d", Tensor::from_parts(shape, out), Op::MaxPool { x: xi, argmax }, &[xi])
    }

    /// Maximum over the whole time axis: `[B, T, C] → [B, C]` (or `[T, C] → [C]`).
    pub fn global_max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let (xi, xt) = self.node(x)?;
        let (batch, time, ch) = seq_dims("global_max_pool", xt.shape())?;
        let data = xt.data();
        let mut out = Vec::with_capacity(batch * ch);
        let mut argmax = Vec::with_capacity(batch * ch);
        for b in 0..batch {
            for c in 0..ch {
                let mut best = b * time * ch + c;
                for t in 1..time {
                    let idx = (b * time + t) * ch + c;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
        let shape = if xt.rank() == 2 { vec![ch] } else { vec![batch, ch] };
        self.push("global_max_pool", Tensor::from_parts(shape, out), Op::MaxPool { x: xi, argmax }, &[xi])
    }

    /// Joins tensors along their last axis, in the given order.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Empty { op: "concat" });
        };
        let lead = {
            let s = self.value(first)?.shape();
            s[..s.len().saturating_sub(1)].to_vec()
        };
        let mut idx = Vec::with_capacity(parts.len());
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pi, pt) = self.node(p)?;
            let s = pt.shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(first)?.shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            idx.push(pi);
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&pi, &w) in idx.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[pi].value.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let inputs = idx.clone();
        self.push("concat", Tensor::from_parts(shape, out), Op::Concat { parts: idx }, &inputs)
    }

    /// Copies `len` consecutive entries of the last axis starting at `start`.
    pub fn slice_last(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (xi, xt) = self.node(x)?;
        let (rows, n) = rows_last(xt.shape());
        if len == 0 || start + len > n {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_last",
                index: start + len,
                bound: n,
            });
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xt.data()[r * n + start..r * n + start + len]);
        }
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().expect("non-scalar") = len;
        self.push("slice_last", Tensor::from_parts(shape, out), Op::SliceLast { x: xi, start }, &[xi])
    }

    /// Splits the last axis into consecutive segments of the given widths.
    pub fn split_last(&mut self, x: NodeId, widths: &[usize]) -> Result<Vec<NodeId>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &w in widths {
            out.push(self.slice_last(x, start, w)?);
            start += w;
        }
        Ok(out)
    }

    /// Row-wise softmax over the last axis, computed after subtracting the
    /// row maximum.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let (xi, xt) = self.node(x)?;
        let (_, k) = rows_last(xt.shape());
        let mut out = xt.data().to_vec();
        for row in out.chunks_exact_mut(k) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let shape = xt.shape().to_vec();
        self.push("softmax", Tensor::from_parts(shape, out), Op::Softmax { x: xi }, &[xi])
    }

    /// Mean negative log-likelihood of `labels` under row distributions
    /// `probs` (`[B, K]`). Probabilities are floored at 1e-12.
    pub fn cross_entropy(&mut self, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (pi, pt) = self.node(probs)?;
        let &[batch, k] = pt.shape() else {
            return Err(TensorError::Rank {
                op: "cross_entropy",
                expected: 2,
                shape: pt.shape().to_vec(),
            });
        };
        if labels.len() != batch {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: pt.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let floor = T::from_f64(PROB_FLOOR);
        let mut total = T::zero();
        for (b, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: y,
                    bound: k,
                });
            }
            total += -pt.data()[b * k + y].max(floor).ln();
        }
        let loss = total / T::from_f64(batch as f64);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs: pi,
                labels: labels.to_vec(),
            },
            &[pi],
        )
    }

    /// Row look-up: `ids` (row-major `[batch, time]`) into a `[V, D]` table,
    /// producing `[batch, time, D]`. Rows equal to `pad` receive no gradient.
    pub fn embedding(
        &mut self,
        table: NodeId,
        ids: &[usize],
        batch: usize,
        time: usize,
        pad: Option<usize>,
    ) -> Result<NodeId> {
        let (ti, tt) = self.node(table)?;
        let &[vocab, dim] = tt.shape() else {
            return Err(TensorError::Rank {
                op: "embedding",
                expected: 2,
                shape: tt.shape().to_vec(),
            });
        };
        if ids.len() != batch * time || ids.is_empty() {
            return Err(TensorError::LengthMismatch {
                shape: vec![batch, time],
                expected: batch * time,
                actual: ids.len(),
            });
        }
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    bound: vocab,
                });
            }
            out.extend_from_slice(&tt.data()[id * dim..(id + 1) * dim]);
        }
        self.push(
            "embedding",
            Tensor::from_parts(vec![batch, time, dim], out),
            Op::Embedding {
                table: ti,
                ids: ids.to_vec(),
                pad,
            },
            &[ti],
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let (xi, xt) = self.node(x)?;
        let t = xt.reshape(shape)?;
        self.push("reshape", t, Op::Reshape { x: xi }, &[xi])
    }

    /// `[B, T, D] → [B, D]` at time step `t`.
    pub fn slice_time(&mut self, x: NodeId, t: usize) -> Result<NodeId> {
        let (xi, xt) = self.node(x)?;
        let &[batch, time, dim] = xt.shape() else {
            return Err(TensorError::Rank {
                op: "slice_time",
                expected: 3,
                shape: xt.shape().to_vec(),
            });
        };
        if t >= time {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_time",
                index: t,
                bound: time,
            });
        }
        let mut out = Vec::with_capacity(batch * dim);
        for b in 0..batch {
            let s = (b * time + t) * dim;
            out.extend_from_slice(&xt.data()[s..s + dim]);
        }
        self.push("slice_time", Tensor::from_parts(vec![batch, dim], out), Op::SliceTime { x: xi, t }, &[xi])
    }

    /// Stacks `T` tensors of shape `[B, D]` into `[B, T, D]`.
    pub fn stack_time(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Empty { op: "stack_time" });
        };
        let shape = self.value(first)?.shape().to_vec();
        let &[batch, dim] = shape.as_slice() else {
            return Err(TensorError::Rank {
                op: "stack_time",
                expected: 2,
                shape,
            });
        };
        let mut idx = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pi, pt) = self.node(p)?;
            if pt.shape() != shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_time",
                    lhs: shape.clone(),
                    rhs: pt.shape().to_vec(),
                });
            }
            idx.push(pi);
        }
        let time = idx.len();
        let mut out = zeros(batch * time * dim);
        for (t, &pi) in idx.iter().enumerate() {
            let src = self.nodes[pi].value.data();
            for b in 0..batch {
                let d = (b * time + t) * dim;
                out[d..d + dim].copy_from_slice(&src[b * dim..(b + 1) * dim]);
            }
        }
        let inputs = idx.clone();
        self.push(
            "stack_time",
            Tensor::from_parts(vec![batch, time, dim], out),
            Op::StackTime { parts: idx },
            &inputs,
        )
    }

    /// Right-pads `[B, T, C]` with zero steps up to `time` (no-op when
    /// already long enough).
    pub fn pad_time(&mut self, x: NodeId, time: usize) -> Result<NodeId> {
        let (xi, xt) = self.node(x)?;
        let &[batch, t, c] = xt.shape() else {
            return Err(TensorError::Rank {
                op: "pad_time",
                expected: 3,
                shape: xt.shape().to_vec(),
            });
        };
        if time <= t {
            return Ok(x);
        }
        let mut out = zeros(batch * time * c);
        for b in 0..batch {
            out[b * time * c..(b * time + t) * c].copy_from_slice(&xt.data()[b * t * c..(b + 1) * t * c]);
        }
        self.push("pad_time", Tensor::from_parts(vec![batch, time, c], out), Op::PadTime { x: xi }, &[xi])
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let (xi, xt) = self.node(x)?;
        let s = xt.data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.push("sum", Tensor::scalar(s), Op::Sum { x: xi }, &[xi])
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Afterwards every leaf recorded with `requires_grad` holds
    /// `d loss / d leaf` (zeros when the leaf does not influence the loss).
    /// Calling it again recomputes from scratch.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let li = self.index(loss)?;
        if self.nodes[li].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.nodes[li].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[li].requires_grad {
            grads[li] = Some(vec![T::one()]);
        }
        for i in (0..=li).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(zeros(node.value.numel()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |j: usize| &self.nodes[j].value;
        let wants = |j: usize| self.nodes[j].requires_grad;
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (val(a).shape()[0], val(a).shape()[1]);
                let n = val(b).shape()[1];
                if wants(a) {
                    let da = accumulate(grads, a, m * k);
                    gemm(g, View::dense(m, n), val(b).data(), View::dense(k, n).t(), T::one(), da, View::dense(m, k));
                }
                if wants(b) {
                    let db = accumulate(grads, b, k * n);
                    gemm(val(a).data(), View::dense(m, k).t(), g, View::dense(m, n), T::one(), db, View::dense(k, n));
                }
            }
            &Op::Add(a, b) => {
                for j in [a, b] {
                    if wants(j) {
                        for (d, &gv) in accumulate(grads, j, g.len()).iter_mut().zip(g) {
                            *d += gv;
                        }
                    }
                }
            }
            &Op::Mul(a, b) => {
                for (j, other) in [(a, b), (b, a)] {
                    if wants(j) {
                        let o = val(other).data();
                        for ((d, &gv), &ov) in accumulate(grads, j, g.len()).iter_mut().zip(g).zip(o) {
                            *d += gv * ov;
                        }
                    }
                }
            }
            &Op::AddBias { x, bias } => {
                if wants(x) {
                    for (d, &gv) in accumulate(grads, x, g.len()).iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if wants(bias) {
                    let n = val(bias).numel();
                    let db = accumulate(grads, bias, n);
                    for row in g.chunks_exact(n) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
            }
            &Op::Act { x, kind } => {
                if wants(x) {
                    let y = self.nodes[i].value.data();
                    for ((d, &gv), &yv) in accumulate(grads, x, g.len()).iter_mut().zip(g).zip(y) {
                        *d += gv * kind.slope(yv);
                    }
                }
            }
            &Op::Conv1d { x, kernel, bias } => self.conv1d_backward(i, x, kernel, bias, g, grads),
            Op::MaxPool { x, argmax } => {
                let x = *x;
                if wants(x) {
                    let dx = accumulate(grads, x, val(x).numel());
                    for (&src, &gv) in argmax.iter().zip(g) {
                        dx[src] += gv;
                    }
                }
            }
            Op::Concat { parts } => {
                let total = *self.nodes[i].value.shape().last().expect("concat output has an axis");
                let rows = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = *val(p).shape().last().expect("concat part has an axis");
                    if wants(p) {
                        let dp = accumulate(grads, p, rows * w);
                        for r in 0..rows {
                            for (d, &gv) in dp[r * w..(r + 1) * w].iter_mut().zip(&g[r * total + offset..]) {
                                *d += gv;
                            }
                        }
                    }
                    offset += w;
                }
            }
            &Op::Softmax { x } => {
                if wants(x) {
                    let y = self.nodes[i].value.data();
                    let (_, k) = rows_last(self.nodes[i].value.shape());
                    let dx = accumulate(grads, x, g.len());
                    for ((dr, gr), yr) in dx.chunks_exact_mut(k).zip(g.chunks_exact(k)).zip(y.chunks_exact(k)) {
                        let dot = gr.iter().zip(yr).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                        for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy { probs, labels } => {
                let probs = *probs;
                if wants(probs) {
                    let p = val(probs);
                    let k = p.shape()[1];
                    let batch = T::from_f64(labels.len() as f64);
                    let floor = T::from_f64(PROB_FLOOR);
                    let dp = accumulate(grads, probs, p.numel());
                    for (b, &y) in labels.iter().enumerate() {
                        let pv = p.data()[b * k + y];
                        if pv > floor {
                            dp[b * k + y] += -g[0] / (batch * pv);
                        }
                    }
                }
            }
            Op::Embedding { table, ids, pad } => {
                let table = *table;
                if wants(table) {
                    let dim = val(table).shape()[1];
                    let dt = accumulate(grads, table, val(table).numel());
                    for (pos, &id) in ids.iter().enumerate() {
                        if Some(id) == *pad {
                            continue;
                        }
                        for (d, &gv) in dt[id * dim..(id + 1) * dim].iter_mut().zip(&g[pos * dim..]) {
                            *d += gv;
                        }
                    }
                }
            }
            &Op::Reshape { x } | &Op::Sum { x } => {
                if wants(x) {
                    let n = val(x).numel();
                    let dx = accumulate(grads, x, n);
                    if g.len() == n {
                        for (d, &gv) in dx.iter_mut().zip(g) {
                            *d += gv;
                        }
                    } else {
                        for d in dx.iter_mut() {
                            *d += g[0];
                        }
                    }
                }
            }
            &Op::SliceTime { x, t } => {
                if wants(x) {
                    let &[batch, time, dim] = val(x).shape() else { unreachable!() };
                    let dx = accumulate(grads, x, batch * time * dim);
                    for b in 0..batch {
                        let s = (b * time + t) * dim;
                        for (d, &gv) in dx[s..s + dim].iter_mut().zip(&g[b * dim..]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::StackTime { parts } => {
                let &[batch, time, dim] = self.nodes[i].value.shape() else { unreachable!() };
                for (t, &p) in parts.iter().enumerate() {
                    if wants(p) {
                        let dp = accumulate(grads, p, batch * dim);
                        for b in 0..batch {
                            let s = (b * time + t) * dim;
                            for (d, &gv) in dp[b * dim..(b + 1) * dim].iter_mut().zip(&g[s..s + dim]) {
                                *d += gv;
                            }
                        }
                    }
                }
            }
            &Op::PadTime { x } => {
                if wants(x) {
                    let &[batch, t, c] = val(x).shape() else { unreachable!() };
                    let time = self.nodes[i].value.shape()[1];
                    let dx = accumulate(grads, x, batch * t * c);
                    for b in 0..batch {
                        for (d, &gv) in dx[b * t * c..(b + 1) * t * c].iter_mut().zip(&g[b * time * c..]) {
                            *d += gv;
                        }
                    }
                }
            }
            &Op::SliceLast { x, start } => {
                if wants(x) {
                    let (rows, n) = rows_last(val(x).shape());
                    let len = g.len() / rows;
                    let dx = accumulate(grads, x, rows * n);
                    for r in 0..rows {
                        for (d, &gv) in dx[r * n + start..r * n + start + len].iter_mut().zip(&g[r * len..]) {
                            *d += gv;
                        }
                    }
                }
            }
        }
    }

    fn conv1d_backward(
        &self,
        i: usize,
        x: usize,
        kernel: usize,
        bias: usize,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let xt = &self.nodes[x].value;
        let kt = &self.nodes[kernel].value;
        let (batch, time, c_in) = seq_dims("conv1d", xt.shape()).expect("validated on forward");
        let &[c_out, _, width] = kt.shape() else { unreachable!() };
        let t_out = time - width + 1;
        let rows = batch * time - width + 1;

        if self.nodes[bias].requires_grad {
            let db = accumulate(grads, bias, c_out);
            for row in g.chunks_exact(c_out) {
                for (d, &gv) in db.iter_mut().zip(row) {
                    *d += gv;
                }
            }
        }
        let want_x = self.nodes[x].requires_grad;
        let want_k = self.nodes[kernel].requires_grad;
        if !want_x && !want_k {
            return;
        }
        // Re-expand to the flattened window layout used on the forward pass;
        // straddling rows carry zero gradient.
        let mut full = zeros(rows * c_out);
        for b in 0..batch {
            let src = &g[b * t_out * c_out..(b + 1) * t_out * c_out];
            full[b * time * c_out..b * time * c_out + t_out * c_out].copy_from_slice(src);
        }
        debug_assert_eq!(self.nodes[i].value.numel(), batch * t_out * c_out);
        let gv = View::dense(rows, c_out);
        if want_x {
            let dx = accumulate(grads, x, xt.numel());
            for j in 0..width {
                let kv = View {
                    offset: j,
                    rows: c_out,
                    cols: c_in,
                    rs: c_in * width,
                    cs: width,
                };
                let dv = View {
                    offset: j * c_in,
                    rows,
                    cols: c_in,
                    rs: c_in,
                    cs: 1,
                };
                gemm(&full, gv, kt.data(), kv, T::one(), dx, dv);
            }
        }
        if want_k {
            let dk = accumulate(grads, kernel, kt.numel());
            for j in 0..width {
                let xv = View {
                    offset: j * c_in,
                    rows: c_in,
                    cols: rows,
                    rs: 1,
                    cs: c_in,
                };
                let kv = View {
                    offset: j,
                    rows: c_in,
                    cols: c_out,
                    rs: width,
                    cs: c_in * width,
                };
                gemm(xt.data(), xv, &full, gv, T::one(), dk, kv);
            }
        }
    }
}
