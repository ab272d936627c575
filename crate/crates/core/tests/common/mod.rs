//! Helpers shared by the integration test targets: random inputs, gradient
//! check suites and hand-rolled reference implementations.

#![allow(dead_code)]

use concat_textclass::layers::{bilstm_forward, BiLstmHead, ConvBlock, Dense, Embedding, Lstm};
use concat_textclass::models::{ConvSpec, Dims, Model, NetworkConfig, SubnetConfig};
use concat_textclass::params::{Binding, Initializer, ParamStore};
use concat_textclass::tensor::{grad_check, Activation, GradCheckReport, Graph, NodeId, Scalar, Tensor};
use concat_textclass::TensorError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type R<T> = Result<T, TensorError>;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values whose magnitude is at least `gap`, random sign.
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng, gap: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..2.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Distinct values (spaced ≥ 0.05 apart) in random order: every pooling
/// window has a unique maximum.
pub fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Weighted sum so every output element carries a distinct weight.
pub fn probe<T: Scalar>(g: &mut Graph<T>, y: NodeId) -> R<NodeId> {
    let v = g.value(y)?.clone();
    let w: Vec<T> = (0..v.numel())
        .map(|i| T::from_f64(0.3 + ((i * 7) % 11) as f64 * 0.1))
        .collect();
    let w = g.tensor(v.shape().to_vec(), &w, false)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

pub fn gc64(name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[NodeId]) -> R<NodeId>) -> GradCheckReport {
    grad_check(&format!("{name} (f64)"), f, &inputs, 1e-6, 1e-4).unwrap()
}

pub fn gc32(name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f32>, &[NodeId]) -> R<NodeId>) -> GradCheckReport {
    let inputs: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast()).collect();
    grad_check(&format!("{name} (f32)"), f, &inputs, 1e-2, 1e-2).unwrap()
}

/// Gradient checks for every graph operation at both precisions.
pub fn op_grad_checks() -> Vec<GradCheckReport> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&[3, 4], &mut rng, -1.0, 1.0);
    let b = random(&[4, 2], &mut rng, -1.0, 1.0);
    out.push(gc64("matmul", vec![a.clone(), b.clone()], |g, x| {
        let y = g.matmul(x[0], x[1])?;
        probe(g, y)
    }));
    out.push(gc32("matmul", vec![a, b], |g, x| {
        let y = g.matmul(x[0], x[1])?;
        probe(g, y)
    }));

    let x = random(&[2, 6, 3], &mut rng, -1.0, 1.0);
    let k = random(&[4, 3, 3], &mut rng, -1.0, 1.0);
    let bias = random(&[4], &mut rng, -1.0, 1.0);
    out.push(gc64("conv1d", vec![x.clone(), k.clone(), bias.clone()], |g, x| {
        let y = g.conv1d(x[0], x[1], x[2])?;
        probe(g, y)
    }));
    out.push(gc32("conv1d", vec![x, k, bias], |g, x| {
        let y = g.conv1d(x[0], x[1], x[2])?;
        probe(g, y)
    }));

    for kind in [Activation::Relu, Activation::Tanh, Activation::Sigmoid] {
        let x = away_from_zero(&[3, 5], &mut rng, 1e-3);
        out.push(gc64(kind.name(), vec![x], move |g, x| {
            let y = g.activation(x[0], kind)?;
            probe(g, y)
        }));
        // the f32 step is 1e-2, so relu inputs stay further from the kink
        let x = away_from_zero(&[3, 5], &mut rng, 2e-2);
        out.push(gc32(kind.name(), vec![x], move |g, x| {
            let y = g.activation(x[0], kind)?;
            probe(g, y)
        }));
    }

    let x = distinct(&[2, 7, 3], &mut rng);
    out.push(gc64("max_pool1d", vec![x.clone()], |g, x| {
        let y = g.max_pool1d(x[0], 2, 2)?;
        probe(g, y)
    }));
    out.push(gc64("global_max_pool", vec![x.clone()], |g, x| {
        let y = g.global_max_pool(x[0])?;
        probe(g, y)
    }));
    out.push(gc32("max_pool1d", vec![x.clone()], |g, x| {
        let y = g.max_pool1d(x[0], 3, 2)?;
        probe(g, y)
    }));
    out.push(gc32("global_max_pool", vec![x], |g, x| {
        let y = g.global_max_pool(x[0])?;
        probe(g, y)
    }));

    let p = random(&[2, 3], &mut rng, -1.0, 1.0);
    let q = random(&[2, 4], &mut rng, -1.0, 1.0);
    out.push(gc64("concat", vec![p.clone(), q.clone()], |g, x| {
        let y = g.concat(&[x[0], x[1]])?;
        probe(g, y)
    }));
    out.push(gc32("concat+split", vec![p, q], |g, x| {
        let y = g.concat(&[x[0], x[1]])?;
        let parts = g.split_last(y, &[5, 2])?;
        let s = g.mul(parts[1], parts[1])?;
        let a = probe(g, parts[0])?;
        let b = probe(g, s)?;
        let ab = g.add(a, b)?;
        g.sum(ab)
    }));

    let logits = random(&[3, 5], &mut rng, -2.0, 2.0);
    out.push(gc64("softmax", vec![logits.clone()], |g, x| {
        let y = g.softmax(x[0])?;
        probe(g, y)
    }));
    out.push(gc32("softmax", vec![logits.clone()], |g, x| {
        let y = g.softmax(x[0])?;
        probe(g, y)
    }));
    out.push(gc64("softmax+cross_entropy", vec![logits.clone()], |g, x| {
        let y = g.softmax(x[0])?;
        g.cross_entropy(y, &[0, 4, 2])
    }));
    out.push(gc32("softmax+cross_entropy", vec![logits], |g, x| {
        let y = g.softmax(x[0])?;
        g.cross_entropy(y, &[0, 4, 2])
    }));

    let probs = random(&[2, 3], &mut rng, 0.2, 0.9);
    out.push(gc64("cross_entropy", vec![probs.clone()], |g, x| g.cross_entropy(x[0], &[2, 1])));
    out.push(gc32("cross_entropy", vec![probs], |g, x| g.cross_entropy(x[0], &[2, 1])));

    let u = random(&[2, 3], &mut rng, -1.0, 1.0);
    let v = random(&[2, 3], &mut rng, -1.0, 1.0);
    let bias = random(&[3], &mut rng, -1.0, 1.0);
    out.push(gc64("add/mul/add_bias", vec![u.clone(), v.clone(), bias.clone()], |g, x| {
        let s = g.add(x[0], x[1])?;
        let m = g.mul(s, x[0])?;
        let y = g.add_bias(m, x[2])?;
        probe(g, y)
    }));
    out.push(gc32("add/mul/add_bias", vec![u, v, bias], |g, x| {
        let s = g.add(x[0], x[1])?;
        let m = g.mul(s, x[0])?;
        let y = g.add_bias(m, x[2])?;
        probe(g, y)
    }));

    let seq = random(&[2, 3, 4], &mut rng, -1.0, 1.0);
    out.push(gc64("slice/stack/reshape/pad", vec![seq.clone()], |g, x| {
        let a = g.slice_time(x[0], 2)?;
        let b = g.slice_time(x[0], 0)?;
        let st = g.stack_time(&[a, b, a])?;
        let padded = g.pad_time(st, 5)?;
        let r = g.reshape(padded, [10, 4])?;
        let c = g.slice_last(r, 1, 2)?;
        probe(g, c)
    }));
    out.push(gc32("slice/stack/reshape/pad", vec![seq], |g, x| {
        let a = g.slice_time(x[0], 2)?;
        let b = g.slice_time(x[0], 0)?;
        let st = g.stack_time(&[a, b, a])?;
        let padded = g.pad_time(st, 5)?;
        let r = g.reshape(padded, [10, 4])?;
        let c = g.slice_last(r, 1, 2)?;
        probe(g, c)
    }));

    let table = random(&[5, 3], &mut rng, -1.0, 1.0);
    out.push(gc64("embedding", vec![table.clone()], |g, x| {
        let e = g.embedding(x[0], &[1, 4, 4, 2, 0, 3], 2, 3, None)?;
        probe(g, e)
    }));
    out.push(gc32("embedding", vec![table], |g, x| {
        let e = g.embedding(x[0], &[1, 4, 4, 2, 0, 3], 2, 3, None)?;
        probe(g, e)
    }));
    out
}

/// Parameters of a freshly built layer, as f64 tensors.
fn store_inputs<T: Scalar>(store: &ParamStore<T>) -> Vec<Tensor<f64>> {
    store.tensors().iter().map(|t| t.cast()).collect()
}

fn bind_rest(x: &[NodeId], skip: usize) -> Binding {
    Binding::from_nodes(x[skip..].to_vec())
}

/// A conv block whose pre-activations on `x` all sit at least `gap` from
/// zero, found by re-drawing the seed.
fn conv_case(rng: &mut ChaCha8Rng, gap: f64) -> (ConvBlock, Vec<Tensor<f64>>) {
    loop {
        let mut store = ParamStore::<f64>::new();
        let block = ConvBlock::new(&mut store, &mut Initializer::new(rng.gen()), "c", 3, 2, 2).unwrap();
        store.get_mut(block.bias).data_mut().copy_from_slice(&[0.1, -0.2]);
        let x = random(&[2, 4, 3], rng, -1.0, 1.0);
        let mut g = Graph::new();
        let xi = g.leaf(x.clone(), false);
        let k = g.leaf(store.get(block.kernel).clone(), false);
        let b = g.leaf(store.get(block.bias).clone(), false);
        let pre = g.conv1d(xi, k, b).unwrap();
        if g.value(pre).unwrap().data().iter().all(|v| v.abs() >= gap) {
            let mut inputs = vec![x];
            inputs.extend(store_inputs(&store));
            return (block, inputs);
        }
    }
}

/// Gradient checks through every layer and through whole small models.
pub fn layer_grad_checks() -> Vec<GradCheckReport> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    // embedding; PAD positions take no gradient, so the probe avoids them
    let mut store = ParamStore::<f64>::new();
    let emb = Embedding::new(&mut store, &mut Initializer::new(1), "e", 5, 3).unwrap();
    let inputs = store_inputs(&store);
    let ids = [1, 4, 4, 2, 3, 3];
    let e = emb.clone();
    out.push(gc64("embedding layer", inputs.clone(), move |g, x| {
        let y = e.forward(g, &bind_rest(x, 0), &ids, 2, 3)?;
        probe(g, y)
    }));
    out.push(gc32("embedding layer", inputs, move |g, x| {
        let y = emb.forward(g, &bind_rest(x, 0), &ids, 2, 3)?;
        probe(g, y)
    }));

    // conv block
    let (block, inputs) = conv_case(&mut rng, 1e-3);
    out.push(gc64("conv block", inputs, move |g, x| {
        let y = block.forward(g, &bind_rest(x, 1), x[0])?;
        probe(g, y)
    }));
    let (block, inputs) = conv_case(&mut rng, 5e-2);
    out.push(gc32("conv block", inputs, move |g, x| {
        let y = block.forward(g, &bind_rest(x, 1), x[0])?;
        probe(g, y)
    }));

    // lstm, both directions
    for reverse in [false, true] {
        let mut store = ParamStore::<f64>::new();
        let lstm = Lstm::new(&mut store, &mut Initializer::new(2), "l", 3, 2).unwrap();
        let mut inputs = vec![random(&[2, 3, 3], &mut rng, -1.0, 1.0)];
        inputs.extend(store_inputs(&store));
        let name = if reverse { "lstm reverse" } else { "lstm forward" };
        let l = lstm.clone();
        out.push(gc64(name, inputs.clone(), move |g, x| {
            let o = l.forward(g, &bind_rest(x, 1), x[0], reverse)?;
            let a = probe(g, o.states)?;
            let b = probe(g, o.last)?;
            g.add(a, b)
        }));
        out.push(gc32(name, inputs, move |g, x| {
            let o = lstm.forward(g, &bind_rest(x, 1), x[0], reverse)?;
            let a = probe(g, o.states)?;
            let b = probe(g, o.last)?;
            g.add(a, b)
        }));
    }

    // bidirectional lstm with the per-step head
    let mut store = ParamStore::<f64>::new();
    let mut init = Initializer::new(3);
    let fwd = Lstm::new(&mut store, &mut init, "f", 3, 2).unwrap();
    let bwd = Lstm::new(&mut store, &mut init, "b", 3, 2).unwrap();
    let head = BiLstmHead::new(&mut store, &mut init, "h", 2, 2).unwrap();
    store.get_mut(head.bias).data_mut().copy_from_slice(&[0.2, -0.1]);
    let mut inputs = vec![random(&[2, 3, 3], &mut rng, -1.0, 1.0)];
    inputs.extend(store_inputs(&store));
    let parts = (fwd.clone(), bwd.clone(), head.clone());
    out.push(gc64("bilstm", inputs.clone(), move |g, x| {
        let o = bilstm_forward(g, &bind_rest(x, 1), &parts.0, &parts.1, &parts.2, x[0])?;
        let a = probe(g, o.y)?;
        let b = probe(g, o.feature)?;
        g.add(a, b)
    }));
    out.push(gc32("bilstm", inputs, move |g, x| {
        let o = bilstm_forward(g, &bind_rest(x, 1), &fwd, &bwd, &head, x[0])?;
        let a = probe(g, o.y)?;
        let b = probe(g, o.feature)?;
        g.add(a, b)
    }));

    // dense with each activation
    for act in [None, Some(Activation::Tanh), Some(Activation::Sigmoid), Some(Activation::Relu)] {
        let mut store = ParamStore::<f64>::new();
        let d = Dense::new(&mut store, &mut Initializer::new(4), "d", 4, 3, act).unwrap();
        store.get_mut(d.bias).data_mut().copy_from_slice(&[0.5, -0.5, 0.25]);
        let name = format!("dense {}", act.map_or("linear", |a| a.name()));
        let mut inputs = vec![random(&[2, 4], &mut rng, -1.0, 1.0)];
        inputs.extend(store_inputs(&store));
        let dd = d.clone();
        out.push(gc64(&name, inputs.clone(), move |g, x| {
            let y = dd.forward(g, &bind_rest(x, 1), x[0])?;
            probe(g, y)
        }));
        if act != Some(Activation::Relu) {
            out.push(gc32(&name, inputs, move |g, x| {
                let y = d.forward(g, &bind_rest(x, 1), x[0])?;
                probe(g, y)
            }));
        }
    }

    // whole models: loss through softmax + cross-entropy to every parameter
    let dims = Dims {
        embed_dim: 3,
        filters: 2,
        hidden: 2,
        head_hidden: 3,
        branch_widths: [2, 3, 4],
        branch_depth: 2,
        vgg_filters: [2; 8],
    };
    let cases = [
        ("concat model", NetworkConfig::concat(6, 3, &dims), 2, 6),
        ("textcnn model", NetworkConfig::textcnn(6, 3, &dims, 3), 2, 5),
        ("bilstm model", NetworkConfig::bilstm(6, 3, &dims), 2, 4),
        ("vgg model", NetworkConfig::vgg(6, 3, &dims), 1, 76),
    ];
    for (name, net, batch, time) in cases {
        let model = Model::<f64>::build(&net, 9).unwrap();
        let ids: Vec<usize> = (0..batch * time).map(|_| rng.gen_range(1..6)).collect();
        let labels: Vec<usize> = (0..batch).map(|b| b % 3).collect();
        let inputs = store_inputs(model.params());
        out.push(gc64(name, inputs, move |g, x| {
            let logits = model.logits_graph(g, &bind_rest(x, 0), &ids, batch, time)?;
            let p = g.softmax(logits)?;
            g.cross_entropy(p, &labels)
        }));
    }
    out
}

/// `relu(b[o] + Σ_{c,j} K[o,c,j] · x[b,t+j,c])` by explicit loops, for
/// `x: [B,T,C_in]` and `K: [C_out,C_in,h]`.
pub fn conv_block_oracle(x: &Tensor<f32>, k: &Tensor<f32>, bias: &Tensor<f32>) -> Vec<f64> {
    let (bn, t, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, h) = (k.shape()[0], k.shape()[2]);
    let (xd, kd, bd) = (x.data(), k.data(), bias.data());
    let mut out = Vec::new();
    for b in 0..bn {
        for i in 0..=t - h {
            for o in 0..cout {
                let mut s = bd[o] as f64;
                for c in 0..cin {
                    for j in 0..h {
                        s += kd[(o * cin + c) * h + j] as f64 * xd[(b * t + i + j) * cin + c] as f64;
                    }
                }
                out.push(s.max(0.0));
            }
        }
    }
    out
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Reference LSTM over `x: [B,T,D]` with packed `[D,4H]` / `[H,4H]` / `[4H]`
/// parameters in gate order input, forget, output, candidate. Returns the
/// states `[B,T,H]` in original order and the final states `[B,H]`.
pub fn lstm_oracle(x: &Tensor<f64>, wi: &Tensor<f64>, wr: &Tensor<f64>, bias: &Tensor<f64>, reverse: bool) -> (Vec<f64>, Vec<f64>) {
    let (bn, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let h = wr.shape()[0];
    let mut states = vec![0.0; bn * t * h];
    let mut last = vec![0.0; bn * h];
    for b in 0..bn {
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let steps: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        for &s in &steps {
            let mut pre = bias.data().to_vec();
            for (gcol, p) in pre.iter_mut().enumerate() {
                for k in 0..d {
                    *p += x.data()[(b * t + s) * d + k] * wi.data()[k * 4 * h + gcol];
                }
                for k in 0..h {
                    *p += hs[k] * wr.data()[k * 4 * h + gcol];
                }
            }
            for u in 0..h {
                let i = sigmoid(pre[u]);
                let f = sigmoid(pre[h + u]);
                let o = sigmoid(pre[2 * h + u]);
                let gg = pre[3 * h + u].tanh();
                cs[u] = f * cs[u] + i * gg;
                hs[u] = o * cs[u].tanh();
            }
            states[(b * t + s) * h..(b * t + s + 1) * h].copy_from_slice(&hs);
        }
        last[b * h..(b + 1) * h].copy_from_slice(&hs);
    }
    (states, last)
}

/// Small random `[B,T,C]` input in f32.
pub fn random32(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    random(shape, rng, -1.0, 1.0).cast()
}

pub fn tiny_conv_spec(width: usize, filters: usize) -> SubnetConfig {
    SubnetConfig::Textcnn {
        layers: vec![ConvSpec { width, filters }],
    }
}
