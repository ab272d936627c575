//! Acceptance run: one PASS/FAIL line per criterion, written straight to
//! stderr so it shows even when the harness captures output, then a single
//! assertion. Criteria 5, 6 and 10 train every model kind on the synthetic
//! corpus and take around ten minutes on one core.
//!
//! The VGG-vs-TextCNN direction (criterion 6) is reported and flagged but does
//! not fail the run; producing the report does.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{conv_block_oracle, lstm_oracle, random, random32};
use concat_textclass::bench::bench_predict;
use concat_textclass::checkpoint::{from_bytes, load_checkpoint, read_header, save_checkpoint, to_bytes};
use concat_textclass::corpus::synth::{self, SynthConfig};
use concat_textclass::corpus::{build_vocab, encode_records, filter_and_bucket, LabelTable, Record};
use concat_textclass::layers::{bilstm_forward, BiLstmHead, ConvBlock, Lstm};
use concat_textclass::models::{Classifier, Dims, Ensemble, Model, ModelKind, NetworkConfig, Prediction, VoteMode};
use concat_textclass::params::{Initializer, ParamStore};
use concat_textclass::report::{compare_report, synthetic_compare_data, CompareConfig, CompareReport, SyntheticSplits};
use concat_textclass::tensor::{Graph, Tensor};
use concat_textclass::train::{evaluate, predict_records, train_with, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let reports: Vec<_> = common::op_grad_checks().into_iter().chain(common::layer_grad_checks()).collect();
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} ({:.2e} > {:.0e})", r.op, r.max_rel_error, r.tolerance))
        .collect();
    let worst = reports.iter().map(|r| r.max_rel_error / r.tolerance).fold(0.0, f64::max);
    check(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} checks, worst error at {:.3} of tolerance, {secs:.1} s; failing: {failed:?}",
            reports.len(),
            worst
        ),
    )
}

fn conv_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let (b, cin, cout, h) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
        let t = h + rng.gen_range(0..6);
        let mut store = ParamStore::<f32>::new();
        let block = ConvBlock::new(&mut store, &mut Initializer::new(case), "c", cin, cout, h).map_err(|e| e.to_string())?;
        *store.get_mut(block.bias) = random32(&[cout], &mut rng);
        let x = random32(&[b, t, cin], &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xi = g.leaf(x.clone(), false);
        let y = block.forward(&mut g, &p, xi).map_err(|e| e.to_string())?;
        let want = conv_block_oracle(&x, store.get(block.kernel), store.get(block.bias));
        let got = g.value(y).map_err(|e| e.to_string())?;
        if got.shape() != [b, t - h + 1, cout] {
            return Err(format!("case {case}: shape {:?}", got.shape()));
        }
        for (a, w) in got.data().iter().zip(&want) {
            worst = worst.max((*a as f64 - w).abs());
        }
    }
    check(worst <= 1e-6, format!("100 cases, max abs error {worst:.2e} (limit 1e-6)"))
}

fn bilstm_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let (d, h, o, bn) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..3));
        let t = rng.gen_range(1..=5);
        let mut store = ParamStore::<f64>::new();
        let mut init = Initializer::new(seed);
        let fwd = Lstm::new(&mut store, &mut init, "f", d, h).map_err(|e| e.to_string())?;
        let bwd = Lstm::new(&mut store, &mut init, "b", d, h).map_err(|e| e.to_string())?;
        let head = BiLstmHead::new(&mut store, &mut init, "y", h, o).map_err(|e| e.to_string())?;
        *store.get_mut(head.bias) = random(&[o], &mut rng, -1.0, 1.0);
        let x = random(&[bn, t, d], &mut rng, -2.0, 2.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xi = g.leaf(x.clone(), false);
        let out = bilstm_forward(&mut g, &p, &fwd, &bwd, &head, xi).map_err(|e| e.to_string())?;
        let y = g.value(out.y).map_err(|e| e.to_string())?;
        let lstm = |l: &Lstm, reverse| {
            lstm_oracle(&x, store.get(l.w_input), store.get(l.w_recurrent), store.get(l.bias), reverse).0
        };
        let (fs, bs) = (lstm(&fwd, false), lstm(&bwd, true));
        let (wf, wb, bias) = (store.get(head.w_fwd).data(), store.get(head.w_bwd).data(), store.get(head.bias).data());
        for row in 0..bn * t {
            for k in 0..o {
                let mut want = bias[k];
                for j in 0..h {
                    want += fs[row * h + j] * wf[j * o + k] + bs[row * h + j] * wb[j * o + k];
                }
                worst = worst.max((y.data()[row * o + k] - want).abs());
            }
        }
    }
    check(worst <= 1e-5, format!("50 cases, T <= 5, max abs error {worst:.2e} (limit 1e-5)"))
}

fn memorization() -> Outcome {
    let start = Instant::now();
    let records = synth::generate(&SynthConfig {
        per_class: 40,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let vocab = build_vocab(&records, 1).map_err(|e| e.to_string())?;
    let labels = LabelTable::from_records(&records);
    let data = encode_records(&records, &vocab, &labels, 96).map_err(|e| e.to_string())?;
    let net = NetworkConfig::concat(vocab.len(), labels.len(), &Dims::desk());
    let config = TrainConfig {
        max_epochs: 200,
        patience: 200,
        target_accuracy: Some(0.99),
        seed: 7,
        ..TrainConfig::default()
    };
    let run = || -> Result<_, String> {
        let model = Model::<f32>::build(&net, 7).map_err(|e| e.to_string())?;
        let (model, history) = train_with(model, &data, &data, &config, &mut |_| {}).map_err(|e| e.to_string())?;
        let acc = evaluate(&Classifier::Single(model.clone()), &data, 64).map_err(|e| e.to_string())?;
        Ok((model, history, acc))
    };
    let (a, ha, acc) = run()?;
    let (b, hb, _) = run()?;
    let fingerprint = |h: &concat_textclass::train::History| -> Vec<(u64, u64, u64)> {
        h.epochs.iter().map(|r| (r.train_loss.to_bits(), r.train_acc.to_bits(), r.val_acc.to_bits())).collect()
    };
    let same_params = a
        .params()
        .tensors()
        .iter()
        .zip(b.params().tensors())
        .all(|(x, y)| x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    let deterministic = fingerprint(&ha) == fingerprint(&hb) && same_params;
    let secs = start.elapsed().as_secs_f64();
    check(
        acc >= 0.99 && ha.epochs.len() <= 200 && deterministic && secs < 300.0,
        format!(
            "train accuracy {acc:.4} after {} epochs, repeat run identical: {deterministic}, {secs:.1} s for both runs",
            ha.epochs.len()
        ),
    )
}

fn ordering_report() -> Result<CompareReport, String> {
    let (data, _, _) = synthetic_compare_data(&SyntheticSplits::default()).map_err(|e| e.to_string())?;
    let config = CompareConfig {
        seeds: vec![1, 2, 3, 4, 5],
        ..CompareConfig::default()
    };
    compare_report("Synthetic corpus", &data, &config, &mut |_| {}).map_err(|e| e.to_string())
}

fn ordering(report: &CompareReport, secs: f64) -> Outcome {
    let mean = |k| report.row(k).map(|r| r.mean_accuracy).unwrap_or(f64::NAN);
    let concat = mean(ModelKind::Concat);
    let ensemble = mean(ModelKind::Ensemble);
    let (best_kind, best) = [ModelKind::Textcnn, ModelKind::Bilstm, ModelKind::Vgg]
        .into_iter()
        .map(|k| (k, mean(k)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("three kinds");
    let margin = 100.0 * (concat - best);
    let gap = 100.0 * (concat - ensemble);
    check(
        margin >= 2.0 && gap >= -0.5 && secs < 1800.0,
        format!(
            "concat {:.2}%, best single {} {:.2}% (margin {margin:+.2} points), ensemble {:.2}% (gap {gap:+.2} points), {secs:.0} s",
            100.0 * concat,
            best_kind.display_name(),
            100.0 * best,
            100.0 * ensemble
        ),
    )
}

fn vgg_finding(report: &CompareReport) -> Outcome {
    let mean = |k| report.row(k).map(|r| r.mean_accuracy).unwrap_or(f64::NAN);
    let (vgg, cnn) = (mean(ModelKind::Vgg), mean(ModelKind::Textcnn));
    check(
        vgg <= cnn,
        format!("VGG {:.2}% vs Text CNN {:.2}% over 5 seeds", 100.0 * vgg, 100.0 * cnn),
    )
}

fn bucketing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    let mut lengths: Vec<usize> = vec![9, 10, 500, 501, 5000, 5001, 1, 6000];
    lengths.extend((0..400).map(|_| rng.gen_range(1..=6000)));
    for corpus in 0..20 {
        let records: Vec<Record> = lengths
            .iter()
            .enumerate()
            .filter(|(i, _)| corpus == 0 || (i + corpus) % 3 != 0)
            .map(|(i, &n)| Record::new(format!("c{}", i % 4), "字".repeat(n)))
            .collect();
        let b = filter_and_bucket(&records);
        let kept: Vec<usize> = records.iter().map(|r| r.text.chars().count()).filter(|n| (10..=5000).contains(n)).collect();
        let all = b.get(1).ok_or("bucket 1 missing")?.records();
        let short = b.get(2).ok_or("bucket 2 missing")?.records();
        let long = b.get(3).ok_or("bucket 3 missing")?.records();
        let len = |r: &Record| r.text.chars().count();
        let ok = all.len() == kept.len()
            && short.len() + long.len() == all.len()
            && short.iter().all(|r| (10..=500).contains(&len(r)))
            && long.iter().all(|r| (501..=5000).contains(&len(r)))
            && b.report.kept + b.report.too_short + b.report.too_long == records.len()
            && b.report.too_short == records.iter().filter(|r| len(r) < 10).count()
            && b.report.too_long == records.iter().filter(|r| len(r) > 5000).count();
        if !ok {
            return Err(format!("corpus {corpus}: partition or threshold invariant broken"));
        }
        if corpus == 0 {
            let in_all = |n: usize| all.iter().any(|r| len(r) == n);
            if !(in_all(5000) && !in_all(5001) && !in_all(9) && in_all(10)) {
                return Err("boundary lengths misplaced".into());
            }
        }
    }
    Ok("20 random corpora over lengths 1..=6000; 9 and 5001 dropped, 10 and 5000 kept".into())
}

fn ensemble_degeneracy() -> Outcome {
    let d = Dims::desk();
    let (vocab, classes) = (30, 3);
    let members = vec![
        Model::<f32>::build(&NetworkConfig::textcnn(vocab, classes, &d, 3), 1).map_err(|e| e.to_string())?,
        Model::<f32>::build(&NetworkConfig::textcnn(vocab, classes, &d, 5), 2).map_err(|e| e.to_string())?,
        Model::<f32>::build(&NetworkConfig::bilstm(vocab, classes, &d), 3).map_err(|e| e.to_string())?,
    ];
    let e = Ensemble::new(members.clone(), vec![1.0, 0.0, 0.0], VoteMode::Soft).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    for batch in 0..1000 {
        let (b, t) = (rng.gen_range(1..4), rng.gen_range(5..12));
        let ids: Vec<usize> = (0..b * t).map(|_| rng.gen_range(0..vocab)).collect();
        let want = members[0].predict(&ids, b, t).map_err(|e| e.to_string())?;
        let got = e.predict(&ids, b, t).map_err(|e| e.to_string())?;
        if got.labels != want.labels || got.probs.data() != want.probs.data() {
            return Err(format!("batch {batch}: weights (1,0,0) differ from member 0"));
        }
    }
    let hard = Ensemble::uniform(members, VoteMode::Hard).map_err(|e| e.to_string())?;
    let vote = |l: usize| {
        let mut row = vec![0.1; 3];
        row[l] = 0.8;
        Prediction::from_probs(Tensor::new([1, 3], row).expect("shape"))
    };
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                let votes = [a, b, c];
                let count = |k: usize| votes.iter().filter(|&&v| v == k).count();
                let want = (0..3).find(|&k| count(k) >= 2).unwrap_or(0);
                let got = hard.combine(&[vote(a), vote(b), vote(c)]).map_err(|e| e.to_string())?;
                if got.labels != [want] {
                    return Err(format!("votes {votes:?}: got {:?}, majority {want}", got.labels));
                }
            }
        }
    }
    Ok("1000 batches identical to member 0; all 27 hard-vote patterns match majority enumeration".into())
}

fn checkpoint_roundtrip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = Dims::desk();
    let (vocab, classes) = (30, 3);
    let labels = LabelTable::new(vec!["a".into(), "b".into(), "c".into()]);
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let data: Vec<_> = (0..200)
        .map(|_| concat_textclass::corpus::EncodedRecord {
            ids: (0..rng.gen_range(4..40)).map(|_| rng.gen_range(1..vocab)).collect(),
            label: rng.gen_range(0..classes),
        })
        .collect();
    let single: Classifier<f32> = Model::build(&NetworkConfig::concat(vocab, classes, &d), 9).map_err(|e| e.to_string())?.into();
    let members = vec![
        Model::<f32>::build(&NetworkConfig::textcnn(vocab, classes, &d, 3), 1).map_err(|e| e.to_string())?,
        Model::<f32>::build(&NetworkConfig::textcnn(vocab, classes, &d, 5), 2).map_err(|e| e.to_string())?,
        Model::<f32>::build(&NetworkConfig::bilstm(vocab, classes, &d), 3).map_err(|e| e.to_string())?,
    ];
    let ensemble: Classifier<f32> = Ensemble::new(members, vec![0.5, 0.3, 0.2], VoteMode::Soft).map_err(|e| e.to_string())?.into();
    let mut flips = 0;
    for (i, c) in [single, ensemble].into_iter().enumerate() {
        let path = dir.path().join(format!("m{i}.ctcm"));
        save_checkpoint(&path, &c, &labels, 0xabc).map_err(|e| e.to_string())?;
        let back = load_checkpoint(&path, Some(0xabc)).map_err(|e| e.to_string())?.classifier;
        let (p, q) = (
            predict_records(&c, &data, 16, 1).map_err(|e| e.to_string())?,
            predict_records(&back, &data, 16, 1).map_err(|e| e.to_string())?,
        );
        let bitwise = p.labels == q.labels && p.probs.data().iter().zip(q.probs.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        let acc_same = evaluate(&c, &data, 16).map_err(|e| e.to_string())?.to_bits()
            == evaluate(&back, &data, 16).map_err(|e| e.to_string())?.to_bits();
        if !(bitwise && acc_same) {
            return Err(format!("model {i}: reloaded outputs differ"));
        }
        let bytes = to_bytes(&c, &labels, 0xabc);
        let header = read_header(&bytes, "m".as_ref()).map_err(|e| e.to_string())?;
        for t in &header.tensors {
            let start = t.offset as usize;
            let end = start + 4 * t.shape.iter().product::<usize>();
            // Every byte of small tensors, a spread of positions in large ones.
            let step = ((end - start) / 64).max(1);
            for pos in (start..end).step_by(step) {
                let mut bad = bytes.clone();
                bad[pos] ^= 0x10;
                if from_bytes(&bad, "m".as_ref()).is_ok() {
                    return Err(format!("model {i}: corrupt byte {pos} in {} went unnoticed", t.name));
                }
                flips += 1;
            }
        }
    }
    Ok(format!("single and ensemble reload bit-exact; {flips} single-byte corruptions all detected"))
}

fn determinism() -> Outcome {
    let splits = SyntheticSplits {
        train: 300,
        val: 50,
        test: 100,
        ..SyntheticSplits::default()
    };
    let config = CompareConfig {
        seeds: vec![1, 2],
        train: TrainConfig {
            max_epochs: 4,
            ..TrainConfig::default()
        },
        ..CompareConfig::default()
    };
    let table = || -> Result<String, String> {
        let (data, _, _) = synthetic_compare_data(&splits).map_err(|e| e.to_string())?;
        let r = compare_report("Synthetic corpus", &data, &config, &mut |_| {}).map_err(|e| e.to_string())?;
        Ok(r.render_text(false))
    };
    let (a, b) = (table()?, table()?);
    check(
        a == b,
        format!("two compare runs over all five kinds and two seeds, accuracy tables {} bytes, identical: {}", a.len(), a == b),
    )
}

fn bench_protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let records = synth::generate(&SynthConfig {
        per_class: 6000,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let vocab = build_vocab(&records, 1).map_err(|e| e.to_string())?;
    let labels = LabelTable::from_records(&records);
    let data = encode_records(&records, &vocab, &labels, 96).map_err(|e| e.to_string())?;
    let model = Model::<f32>::build(&NetworkConfig::concat(vocab.len(), labels.len(), &Dims::desk()), 0).map_err(|e| e.to_string())?;
    let path = dir.path().join("bench.ctcm");
    save_checkpoint(&path, &model.into(), &labels, vocab.digest()).map_err(|e| e.to_string())?;
    let r = bench_predict(&path, &data, 64, Some(vocab.digest())).map_err(|e| e.to_string())?;
    check(
        r.records == 30000 && r.total_seconds == r.load_seconds + r.predict_seconds,
        format!(
            "{} records: load {:.3} s, predict {:.3} s, total {:.3} s, {:.0} records/s",
            r.records, r.load_seconds, r.predict_seconds, r.total_seconds, r.records_per_second
        ),
    )
}

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

#[test]
fn acceptance() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, outcome: Outcome| {
        let line = match &outcome {
            Ok(d) => format!("PASS criterion {n} ({name}): {d}"),
            Err(d) => format!("FAIL criterion {n} ({name}): {d}"),
        };
        let _ = writeln!(std::io::stderr(), "{line}");
        results.push((n, name, outcome));
    };
    record(1, "gradient integrity", guarded(gradient_integrity));
    record(2, "convolution block conformance", guarded(conv_conformance));
    record(3, "Bi-LSTM conformance", guarded(bilstm_conformance));
    record(4, "memorization", guarded(memorization));
    let start = Instant::now();
    let report = guarded(ordering_report);
    let secs = start.elapsed().as_secs_f64();
    match &report {
        Ok(r) => {
            let _ = write!(std::io::stderr(), "{}", r.render_text(true));
            record(5, "concatenation ordering", guarded(|| ordering(r, secs)));
            record(6, "VGG finding", guarded(|| vgg_finding(r)));
        }
        Err(e) => {
            record(5, "concatenation ordering", Err(e.clone()));
            record(6, "VGG finding", Err(e.clone()));
        }
    }
    record(7, "bucketing partition", guarded(bucketing));
    record(8, "ensemble degeneracy", guarded(ensemble_degeneracy));
    record(9, "checkpoint roundtrip", guarded(checkpoint_roundtrip));
    record(10, "determinism", guarded(determinism));
    record(11, "bench protocol", guarded(bench_protocol));
    let failed: Vec<String> = results
        .iter()
        .filter(|(n, _, o)| o.is_err() && (*n != 6 || report.is_err()))
        .map(|(n, name, _)| format!("{n} ({name})"))
        .collect();
    assert!(failed.is_empty(), "failing criteria: {}", failed.join(", "));
}
