mod common;

use common::{conv_block_oracle, lstm_oracle, random, random32};
use concat_textclass::layers::{bilstm_forward, BiLstmHead, ConvBlock, Dense, Embedding, Lstm, PAD_INDEX};
use concat_textclass::params::{Initializer, ParamStore};
use concat_textclass::tensor::{Activation, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn set(store: &mut ParamStore<f64>, id: concat_textclass::params::ParamId, v: &[f64]) {
    store.get_mut(id).data_mut().copy_from_slice(v);
}

#[test]
fn embedding_rows_and_pad() {
    let mut store = ParamStore::<f64>::new();
    let emb = Embedding::new(&mut store, &mut Initializer::new(0), "e", 4, 3).unwrap();
    assert!(store.get(emb.table).data()[..3].iter().all(|&v| v == 0.0));
    let mut g = Graph::new();
    let p = store.bind(&mut g, true);
    let y = emb.forward(&mut g, &p, &[2, 0, 0, 0], 1, 4).unwrap();
    let out = g.value(y).unwrap().data().to_vec();
    assert_eq!(&out[..3], &store.get(emb.table).data()[6..9]);
    assert!(out[3..].iter().all(|&v| v == 0.0));

    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    let grad = g.grad(p.node(emb.table)).unwrap();
    assert_eq!(&grad[..3], &[0.0; 3], "PAD row takes no gradient");
    assert_eq!(&grad[6..9], &[1.0; 3]);

    assert!(Embedding::new(&mut store, &mut Initializer::new(0), "tiny", 1, 3).is_err());
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    assert!(emb.forward(&mut g, &p, &[4], 1, 1).is_err());
}

fn conv(width: usize, kernel: &[f64], bias: f64, x: &[f64]) -> Vec<f64> {
    let mut store = ParamStore::<f64>::new();
    let block = ConvBlock::new(&mut store, &mut Initializer::new(0), "c", 1, 1, width).unwrap();
    set(&mut store, block.kernel, kernel);
    set(&mut store, block.bias, &[bias]);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let xi = g.tensor([1, x.len(), 1], x, false).unwrap();
    let y = block.forward(&mut g, &p, xi).unwrap();
    g.value(y).unwrap().data().to_vec()
}

#[test]
fn conv_block_examples() {
    assert_eq!(conv(2, &[1.0, 1.0], 0.0, &[1.0, 2.0, 3.0, 4.0]), vec![3.0, 5.0, 7.0]);
    assert_eq!(conv(1, &[-1.0], 0.0, &[1.0, 2.0, 3.0]), vec![0.0; 3]);
    assert_eq!(conv(2, &[0.0, 0.0], 4.0, &[1.0, -2.0, 3.0]), vec![4.0; 2]);
}

#[test]
fn conv_block_rejects_short_input() {
    let mut store = ParamStore::<f64>::new();
    let block = ConvBlock::new(&mut store, &mut Initializer::new(0), "c", 1, 1, 3).unwrap();
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.tensor([1, 2, 1], &[1.0, 2.0], false).unwrap();
    assert!(block.forward(&mut g, &p, x).is_err());
}

#[test]
fn conv_block_matches_sliding_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..100 {
        let (b, cin, cout, h) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
        let t = h + rng.gen_range(0..5);
        let mut store = ParamStore::<f32>::new();
        let block = ConvBlock::new(&mut store, &mut Initializer::new(case), "c", cin, cout, h).unwrap();
        *store.get_mut(block.bias) = random32(&[cout], &mut rng);
        let x = random32(&[b, t, cin], &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xi = g.leaf(x.clone(), false);
        let y = block.forward(&mut g, &p, xi).unwrap();
        let want = conv_block_oracle(&x, store.get(block.kernel), store.get(block.bias));
        let got = g.value(y).unwrap();
        assert_eq!(got.shape(), &[b, t - h + 1, cout]);
        for (a, w) in got.data().iter().zip(&want) {
            assert!((*a as f64 - w).abs() <= 1e-6, "case {case}: {a} vs {w}");
            assert!(*a >= 0.0);
        }
    }
}

fn lstm_case(seed: u64, d: usize, h: usize) -> (ParamStore<f64>, Lstm) {
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, &mut Initializer::new(seed), "l", d, h).unwrap();
    (store, lstm)
}

fn run_lstm(store: &ParamStore<f64>, lstm: &Lstm, x: &Tensor<f64>, reverse: bool) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let xi = g.leaf(x.clone(), false);
    let o = lstm.forward(&mut g, &p, xi, reverse).unwrap();
    (g.value(o.states).unwrap().data().to_vec(), g.value(o.last).unwrap().data().to_vec())
}

#[test]
fn lstm_all_zero_stays_zero() {
    let (mut store, lstm) = lstm_case(0, 3, 2);
    for t in store.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let x = Tensor::zeros([1, 2, 3]).unwrap();
    let (states, last) = run_lstm(&store, &lstm, &x, false);
    assert_eq!(states, vec![0.0; 4]);
    assert_eq!(last, vec![0.0; 2]);
}

#[test]
fn lstm_single_step_has_no_direction() {
    let (store, lstm) = lstm_case(1, 3, 4);
    let x = random(&[2, 1, 3], &mut ChaCha8Rng::seed_from_u64(0), -1.0, 1.0);
    assert_eq!(run_lstm(&store, &lstm, &x, false), run_lstm(&store, &lstm, &x, true));
}

#[test]
fn lstm_reverse_equals_flipped_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (store, lstm) = lstm_case(2, 3, 2);
    let (b, t, d, h) = (2, 3, 3, 2);
    let x = random(&[b, t, d], &mut rng, -1.0, 1.0);
    let mut flipped = x.clone();
    for bi in 0..b {
        for s in 0..t {
            let src = &x.data()[(bi * t + t - 1 - s) * d..(bi * t + t - s) * d];
            flipped.data_mut()[(bi * t + s) * d..(bi * t + s + 1) * d].copy_from_slice(src);
        }
    }
    let (rev_states, rev_last) = run_lstm(&store, &lstm, &x, true);
    let (fwd_states, fwd_last) = run_lstm(&store, &lstm, &flipped, false);
    assert_eq!(rev_last, fwd_last);
    for bi in 0..b {
        for s in 0..t {
            let a = &rev_states[(bi * t + s) * h..(bi * t + s + 1) * h];
            let w = &fwd_states[(bi * t + t - 1 - s) * h..(bi * t + t - s) * h];
            assert_eq!(a, w);
        }
    }
}

#[test]
fn lstm_matches_reference_cell_and_stays_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..10 {
        let (mut store, lstm) = lstm_case(seed, 3, 4);
        *store.get_mut(lstm.bias) = random(&[16], &mut rng, -1.0, 1.0);
        let x = random(&[2, 5, 3], &mut rng, -3.0, 3.0);
        for reverse in [false, true] {
            let (states, last) = run_lstm(&store, &lstm, &x, reverse);
            let (ws, wl) = lstm_oracle(&x, store.get(lstm.w_input), store.get(lstm.w_recurrent), store.get(lstm.bias), reverse);
            for (a, w) in states.iter().zip(&ws).chain(last.iter().zip(&wl)) {
                assert!((a - w).abs() < 1e-12, "{a} vs {w}");
                assert!(a.abs() < 1.0);
            }
        }
    }
}

#[test]
fn lstm_init_sets_forget_bias() {
    let (store, lstm) = lstm_case(0, 3, 2);
    assert_eq!(store.get(lstm.bias).data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(lstm.param_count(), 4 * (2 * 3 + 2 * 2 + 2));
    assert_eq!(store.count(), lstm.param_count());
}

struct Bi {
    store: ParamStore<f64>,
    fwd: Lstm,
    bwd: Lstm,
    head: BiLstmHead,
}

fn bi(seed: u64, d: usize, h: usize, o: usize) -> Bi {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(seed);
    let fwd = Lstm::new(&mut store, &mut init, "f", d, h).unwrap();
    let bwd = Lstm::new(&mut store, &mut init, "b", d, h).unwrap();
    let head = BiLstmHead::new(&mut store, &mut init, "y", h, o).unwrap();
    Bi { store, fwd, bwd, head }
}

fn run_bi(m: &Bi, x: &Tensor<f64>) -> (Tensor<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let p = m.store.bind(&mut g, false);
    let xi = g.leaf(x.clone(), false);
    let o = bilstm_forward(&mut g, &p, &m.fwd, &m.bwd, &m.head, xi).unwrap();
    (g.value(o.y).unwrap().clone(), g.value(o.feature).unwrap().data().to_vec())
}

#[test]
fn bilstm_zero_params() {
    let mut m = bi(0, 2, 3, 2);
    for t in m.store.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    set(&mut m.store, m.head.bias, &[0.5, -1.5]);
    let x = random(&[1, 4, 2], &mut ChaCha8Rng::seed_from_u64(0), -1.0, 1.0);
    let (y, feature) = run_bi(&m, &x);
    assert_eq!(y.shape(), &[1, 4, 2]);
    assert!(y.data().chunks(2).all(|r| r == [0.5, -1.5]));
    assert_eq!(feature, vec![0.0; 6]);
}

#[test]
fn bilstm_single_step_feature() {
    let m = bi(4, 2, 3, 2);
    let x = random(&[1, 1, 2], &mut ChaCha8Rng::seed_from_u64(1), -1.0, 1.0);
    let (_, feature) = run_bi(&m, &x);
    let (_, f) = run_lstm(&m.store, &m.fwd, &x, false);
    let (_, b) = run_lstm(&m.store, &m.bwd, &x, false);
    assert_eq!(feature, [f, b].concat());
}

/// y_t = W_fwd·h_fwd_t + W_bwd·h_bwd_t + b from two directional passes and
/// explicit loops.
#[test]
fn bilstm_matches_compositional_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..20 {
        let (d, h, o) = (3, 2, 4);
        let mut m = bi(seed, d, h, o);
        let bias = random(&[o], &mut rng, -1.0, 1.0);
        *m.store.get_mut(m.head.bias) = bias.clone();
        let t = rng.gen_range(1..=5);
        let x = random(&[2, t, d], &mut rng, -1.0, 1.0);
        let (y, feature) = run_bi(&m, &x);
        let (fs, fl) = run_lstm(&m.store, &m.fwd, &x, false);
        let (bs, bl) = run_lstm(&m.store, &m.bwd, &x, true);
        let (wf, wb) = (m.store.get(m.head.w_fwd).data(), m.store.get(m.head.w_bwd).data());
        assert_eq!(y.shape(), &[2, t, o]);
        for row in 0..2 * t {
            for k in 0..o {
                let mut want = bias.data()[k];
                for j in 0..h {
                    want += fs[row * h + j] * wf[j * o + k] + bs[row * h + j] * wb[j * o + k];
                }
                assert!((y.data()[row * o + k] - want).abs() < 1e-12);
            }
        }
        assert_eq!(feature.len(), 2 * 2 * h);
        for b in 0..2 {
            assert_eq!(&feature[b * 2 * h..b * 2 * h + h], &fl[b * h..(b + 1) * h]);
            assert_eq!(&feature[b * 2 * h + h..(b + 1) * 2 * h], &bl[b * h..(b + 1) * h]);
        }
    }
}

#[test]
fn bilstm_rejects_hidden_mismatch() {
    let mut store = ParamStore::<f64>::new();
    let mut init = Initializer::new(0);
    let fwd = Lstm::new(&mut store, &mut init, "f", 2, 3).unwrap();
    let bwd = Lstm::new(&mut store, &mut init, "b", 2, 4).unwrap();
    let head = BiLstmHead::new(&mut store, &mut init, "y", 3, 2).unwrap();
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.tensor([1, 2, 2], &[0.1; 4], false).unwrap();
    assert!(bilstm_forward(&mut g, &p, &fwd, &bwd, &head, x).is_err());
}

fn dense_out(d: &Dense, store: &ParamStore<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let xi = g.leaf(x.clone(), false);
    let y = d.forward(&mut g, &p, xi).unwrap();
    g.value(y).unwrap().data().to_vec()
}

#[test]
fn dense_examples_and_oracle() {
    let mut store = ParamStore::<f64>::new();
    let d = Dense::new(&mut store, &mut Initializer::new(0), "d", 3, 3, None).unwrap();
    set(&mut store, d.weight, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let x = Tensor::new([1, 3], vec![0.5, -2.0, 7.0]).unwrap();
    assert_eq!(dense_out(&d, &store, &x), vec![0.5, -2.0, 7.0]);
    set(&mut store, d.weight, &[0.0; 9]);
    set(&mut store, d.bias, &[1.5; 3]);
    assert_eq!(dense_out(&d, &store, &x), vec![1.5; 3]);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for act in [None, Some(Activation::Relu), Some(Activation::Tanh)] {
        let mut store = ParamStore::<f64>::new();
        let d = Dense::new(&mut store, &mut Initializer::new(1), "d", 4, 2, act).unwrap();
        *store.get_mut(d.bias) = random(&[2], &mut rng, -1.0, 1.0);
        let x = random(&[3, 4], &mut rng, -1.0, 1.0);
        let got = dense_out(&d, &store, &x);
        let (w, b) = (store.get(d.weight).data(), store.get(d.bias).data());
        for r in 0..3 {
            for c in 0..2 {
                let mut v = b[c];
                for k in 0..4 {
                    v += x.data()[r * 4 + k] * w[k * 2 + c];
                }
                let v = match act {
                    None => v,
                    Some(Activation::Relu) => v.max(0.0),
                    Some(Activation::Tanh) => v.tanh(),
                    Some(Activation::Sigmoid) => unreachable!(),
                };
                assert!((got[r * 2 + c] - v).abs() < 1e-12);
            }
        }
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let bad = g.tensor([1, 2], &[1.0, 2.0], false).unwrap();
    assert!(d.forward(&mut g, &p, bad).is_err());
}

#[test]
fn initialization_is_seeded_and_bounded() {
    let build = |seed| {
        let mut store = ParamStore::<f32>::new();
        let mut init = Initializer::new(seed);
        let d = Dense::new(&mut store, &mut init, "d", 3, 2, None).unwrap();
        let e = Embedding::new(&mut store, &mut init, "e", 6, 4).unwrap();
        (store, d, e)
    };
    let (a, d, e) = build(7);
    let (b, _, _) = build(7);
    let (c, _, _) = build(8);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(d.param_count(), 8);
    let r = (6.0f64 / 5.0).sqrt();
    assert!(a.get(d.weight).data().iter().all(|&w| (w as f64).abs() <= r));
    assert!(a.get(d.bias).data().iter().all(|&v| v == 0.0));
    let table = a.get(e.table).data();
    assert!(table[PAD_INDEX * 4..PAD_INDEX * 4 + 4].iter().all(|&v| v == 0.0));
    assert_eq!(Embedding { vocab_size: 4000, dim: 128, ..e }.param_count(), 512_000);
}

#[test]
fn grad_check_every_layer() {
    for r in common::layer_grad_checks() {
        assert!(r.passed, "{}: max rel err {} at {:?}", r.op, r.max_rel_error, r.worst());
    }
}
