//! Parameterized building blocks: character embedding, convolution blocks,
//! LSTM cells, the bidirectional output head, and dense layers.
//!
//! Every layer only holds [`ParamId`]s; the tensors live in a shared
//! [`ParamStore`] and are bound onto a [`Graph`] once per forward pass.

use crate::error::{Result, TensorError};
use crate::params::{Binding, Initializer, ParamId, ParamStore};
use crate::tensor::{Activation, Graph, NodeId, Scalar, Tensor};

/// Row of the embedding table reserved for padding.
pub const PAD_INDEX: usize = 0;

/// Character look-up table. Row [`PAD_INDEX`] is zero and never updated.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        vocab_size: usize,
        dim: usize,
    ) -> Result<Self> {
        if vocab_size < 2 {
            return Err(TensorError::Invalid(format!(
                "embedding needs PAD and UNK rows, vocab size is {vocab_size}"
            )));
        }
        let mut table = init.uniform::<T>(&[vocab_size, dim], vocab_size, dim)?;
        table.data_mut()[PAD_INDEX * dim..(PAD_INDEX + 1) * dim].fill(T::zero());
        Ok(Self {
            table: store.add(format!("{name}.table"), table),
            vocab_size,
            dim,
        })
    }

    /// `ids` is row-major `[batch, time]`; output is `[batch, time, dim]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Binding,
        ids: &[usize],
        batch: usize,
        time: usize,
    ) -> Result<NodeId> {
        g.embedding(p.node(self.table), ids, batch, time, Some(PAD_INDEX))
    }

    pub fn param_count(&self) -> usize {
        self.vocab_size * self.dim
    }
}

/// `relu(conv1d(x, K, b))`.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        width: usize,
    ) -> Result<Self> {
        if width == 0 {
            return Err(TensorError::Invalid("kernel width must be ≥ 1".into()));
        }
        let kernel = init.uniform::<T>(
            &[out_channels, in_channels, width],
            in_channels * width,
            out_channels * width,
        )?;
        Ok(Self {
            kernel: store.add(format!("{name}.kernel"), kernel),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([out_channels])?),
            width,
            in_channels,
            out_channels,
        })
    }

    /// `[B, T, C_in] → [B, T-h+1, C_out]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Binding, x: NodeId) -> Result<NodeId> {
        let y = g.conv1d(x, p.node(self.kernel), p.node(self.bias))?;
        g.relu(y)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.width + self.out_channels
    }
}

/// Standard four-gate LSTM.
///
/// The gate blocks are packed side by side in the order input, forget,
/// output, candidate: `w_input` is `[D, 4H]`, `w_recurrent` is `[H, 4H]`
/// and `bias` is `[4H]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_recurrent: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Hidden states of one directional pass.
#[derive(Clone, Copy, Debug)]
pub struct LstmOutput {
    /// `[B, T, H]`, always in the original time order.
    pub states: NodeId,
    /// `[B, H]`, the hidden state after the last processed step.
    pub last: NodeId,
}

impl Lstm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        if hidden == 0 || input == 0 {
            return Err(TensorError::Invalid("LSTM sizes must be positive".into()));
        }
        let w_input = init.uniform::<T>(&[input, 4 * hidden], input, hidden)?;
        let w_recurrent = init.uniform::<T>(&[hidden, 4 * hidden], hidden, hidden)?;
        let mut bias = Tensor::<T>::zeros([4 * hidden])?;
        bias.data_mut()[hidden..2 * hidden].fill(T::one());
        Ok(Self {
            w_input: store.add(format!("{name}.w_input"), w_input),
            w_recurrent: store.add(format!("{name}.w_recurrent"), w_recurrent),
            bias: store.add(format!("{name}.bias"), bias),
            input,
            hidden,
        })
    }

    /// Runs the recurrence over `x: [B, T, D]` from `h_0 = c_0 = 0`, right
    /// to left when `reverse` is set.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Binding, x: NodeId, reverse: bool) -> Result<LstmOutput> {
        let &[batch, time, dim] = g.value(x)?.shape() else {
            return Err(TensorError::Rank {
                op: "lstm",
                expected: 3,
                shape: g.value(x)?.shape().to_vec(),
            });
        };
        if dim != self.input {
            return Err(TensorError::ShapeMismatch {
                op: "lstm",
                lhs: vec![batch, time, dim],
                rhs: vec![self.input, 4 * self.hidden],
            });
        }
        let h = self.hidden;
        // Input projections for every step at once.
        let flat = g.reshape(x, [batch * time, dim])?;
        let proj = g.matmul(flat, p.node(self.w_input))?;
        let proj = g.add_bias(proj, p.node(self.bias))?;
        let proj = g.reshape(proj, [batch, time, 4 * h])?;

        let steps: Vec<usize> = if reverse { (0..time).rev().collect() } else { (0..time).collect() };
        let mut hidden: Option<NodeId> = None;
        let mut cell: Option<NodeId> = None;
        let mut states = vec![None; time];
        for &t in &steps {
            let mut gates = g.slice_time(proj, t)?;
            if let Some(prev) = hidden {
                let rec = g.matmul(prev, p.node(self.w_recurrent))?;
                gates = g.add(gates, rec)?;
            }
            let ifo = g.slice_last(gates, 0, 3 * h)?;
            let ifo = g.sigmoid(ifo)?;
            let cand = g.slice_last(gates, 3 * h, h)?;
            let cand = g.tanh(cand)?;
            let in_gate = g.slice_last(ifo, 0, h)?;
            let out_gate = g.slice_last(ifo, 2 * h, h)?;
            let write = g.mul(in_gate, cand)?;
            let c = match cell {
                Some(prev) => {
                    let forget = g.slice_last(ifo, h, h)?;
                    let kept = g.mul(forget, prev)?;
                    g.add(kept, write)?
                }
                None => write,
            };
            let squashed = g.tanh(c)?;
            let ht = g.mul(out_gate, squashed)?;
            states[t] = Some(ht);
            hidden = Some(ht);
            cell = Some(c);
        }
        let states: Vec<NodeId> = states.into_iter().map(|s| s.expect("every step visited")).collect();
        let last = hidden.ok_or(TensorError::Empty { op: "lstm" })?;
        let states = g.stack_time(&states)?;
        Ok(LstmOutput { states, last })
    }

    pub fn param_count(&self) -> usize {
        4 * (self.hidden * self.input + self.hidden * self.hidden + self.hidden)
    }
}

/// Per-step output map of a bidirectional LSTM:
/// `y_t = W_fwd·h_fwd_t + W_bwd·h_bwd_t + b`.
#[derive(Clone, Debug)]
pub struct BiLstmHead {
    pub w_fwd: ParamId,
    pub w_bwd: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
    pub output: usize,
}

impl BiLstmHead {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        hidden: usize,
        output: usize,
    ) -> Result<Self> {
        let w_fwd = init.uniform::<T>(&[hidden, output], hidden, output)?;
        let w_bwd = init.uniform::<T>(&[hidden, output], hidden, output)?;
        Ok(Self {
            w_fwd: store.add(format!("{name}.w_fwd"), w_fwd),
            w_bwd: store.add(format!("{name}.w_bwd"), w_bwd),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([output])?),
            hidden,
            output,
        })
    }
}

/// Output of [`bilstm_forward`].
#[derive(Clone, Copy, Debug)]
pub struct BiLstmOutput {
    /// Per-step outputs `[B, T, O]`.
    pub y: NodeId,
    /// `[B, 2H]`: forward final state followed by backward final state.
    pub feature: NodeId,
}

/// Forward and backward passes over the same sequence, the per-step output
/// head, and the fixed-width document feature.
pub fn bilstm_forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &Binding,
    fwd: &Lstm,
    bwd: &Lstm,
    head: &BiLstmHead,
    x: NodeId,
) -> Result<BiLstmOutput> {
    if fwd.hidden != bwd.hidden || head.hidden != fwd.hidden {
        return Err(TensorError::ShapeMismatch {
            op: "bilstm",
            lhs: vec![fwd.hidden],
            rhs: vec![bwd.hidden, head.hidden],
        });
    }
    let f = fwd.forward(g, p, x, false)?;
    let b = bwd.forward(g, p, x, true)?;
    let &[batch, time, h] = g.value(f.states)?.shape() else { unreachable!() };
    let fs = g.reshape(f.states, [batch * time, h])?;
    let bs = g.reshape(b.states, [batch * time, h])?;
    let yf = g.matmul(fs, p.node(head.w_fwd))?;
    let yb = g.matmul(bs, p.node(head.w_bwd))?;
    let y = g.add(yf, yb)?;
    let y = g.add_bias(y, p.node(head.bias))?;
    let y = g.reshape(y, [batch, time, head.output])?;
    let feature = g.concat(&[f.last, b.last])?;
    Ok(BiLstmOutput { y, feature })
}

/// Fully connected layer: `activation(x·W + b)` with `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
    pub activation: Option<Activation>,
}

impl Dense {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        input: usize,
        output: usize,
        activation: Option<Activation>,
    ) -> Result<Self> {
        let weight = init.uniform::<T>(&[input, output], input, output)?;
        Ok(Self {
            weight: store.add(format!("{name}.weight"), weight),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([output])?),
            input,
            output,
            activation,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Binding, x: NodeId) -> Result<NodeId> {
        let &[_, width] = g.value(x)?.shape() else {
            return Err(TensorError::Rank {
                op: "dense",
                expected: 2,
                shape: g.value(x)?.shape().to_vec(),
            });
        };
        if width != self.input {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                lhs: g.value(x)?.shape().to_vec(),
                rhs: vec![self.input, self.output],
            });
        }
        let y = g.matmul(x, p.node(self.weight))?;
        let y = g.add_bias(y, p.node(self.bias))?;
        match self.activation {
            Some(kind) => g.activation(y, kind),
            None => Ok(y),
        }
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}
