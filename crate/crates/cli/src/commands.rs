use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args};
use concat_textclass::bench::bench_predict;
use concat_textclass::checkpoint::{load_checkpoint, save_checkpoint};
use concat_textclass::corpus::synth::{self, SynthConfig};
use concat_textclass::corpus::{
    build_vocab, encode_records, filter_and_bucket, load_corpus, split_stratified, write_corpus, EncodedRecord,
    LabelTable, Record, Vocab, MAX_LEN,
};
use concat_textclass::models::{Classifier, Dims, ModelKind, NetworkConfig, VoteMode};
use concat_textclass::report::{
    compare_report, synthetic_compare_data, CompareConfig, CompareData, Progress, SyntheticSplits,
};
use concat_textclass::train::{
    fit_network, predict_records, weighted_ensemble, EpochRecord, OptimizerKind, Precision, TrainConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::settings::merge;
use crate::Failure;

fn need<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, Failure> {
    value.as_ref().ok_or_else(|| Failure::Usage(format!("{flag} is required")))
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn run_dir(out_dir: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = need(out_dir, "--out-dir")?.clone();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

/// Writes `manifest.json`: the command, the resolved settings, the files it
/// produced and a summary.
fn finish(dir: &Path, command: &str, config: &impl Serialize, outputs: &[&str], summary: Value) -> Result<(), Failure> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "outputs": outputs,
        "summary": summary,
    });
    write(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )
}

fn echo(config: &impl Serialize) {
    eprintln!("resolved config: {}", serde_json::to_string(config).expect("config serializes"));
}

/// Worker threads for eval and predict, capped by `CONCAT_TEXTCLASS_THREADS`.
fn threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("CONCAT_TEXTCLASS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) => available.min(cap.max(1)),
        None => available,
    }
}

fn load_records(path: &Path) -> Result<Vec<Record>, Failure> {
    let c = load_corpus(path)?;
    if c.malformed > 0 {
        eprintln!("warning: {}: skipped {} malformed line(s)", path.display(), c.malformed);
    }
    Ok(c.records)
}

fn load_vocab(path: &Option<PathBuf>) -> Result<Vocab, Failure> {
    Ok(Vocab::load(need(path, "--vocab")?)?)
}

fn bucket_dir(data: &Path, bucket: u8) -> Result<PathBuf, Failure> {
    if !(1..=3).contains(&bucket) {
        return Err(Failure::Usage(format!("--bucket must be 1, 2 or 3, got {bucket}")));
    }
    Ok(data.join(format!("bucket{bucket}")))
}

fn parse<T: std::str::FromStr>(value: &str, flag: &str) -> Result<T, Failure>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Failure::Usage(format!("{flag}: {e}")))
}

// ---------------------------------------------------------------- vocab

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct VocabArgs {
    /// JSON settings file; flags override it
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Corpus file (`label<TAB>text`) [required]
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Run directory; receives vocab.txt and manifest.json [required]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Keep characters seen at least this often
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
}

pub fn vocab(args: VocabArgs, m: &ArgMatches) -> Result<(), Failure> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref(), m)?;
    echo(&a);
    let records = load_records(need(&a.corpus, "--corpus")?)?;
    let dir = run_dir(&a.out_dir)?;
    let v = build_vocab(&records, a.min_freq)?;
    v.save(dir.join("vocab.txt"))?;
    println!("{} entries, digest {:016x}", v.len(), v.digest());
    finish(
        &dir,
        "vocab",
        &a,
        &["vocab.txt"],
        json!({"entries": v.len(), "digest": format!("{:016x}", v.digest())}),
    )
}

// ---------------------------------------------------------------- prepare

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct PrepareArgs {
    /// JSON settings file; flags override it
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Corpus file (`label<TAB>text`) [required]
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Run directory; receives bucket{1,2,3}/{train,test}.tsv and buckets.json [required]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Per-class share of each bucket held out for testing
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    /// Split seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep at most this many training records per class [default: no limit]
    #[arg(long)]
    train_cap: Option<usize>,
}

/// Stratified split; classes with a single record stay in training.
fn split_bucket(
    records: &[Record],
    fraction: f64,
    seed: u64,
    cap: Option<usize>,
) -> Result<(Vec<Record>, Vec<Record>), Failure> {
    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    for r in records {
        *counts.entry(&r.label).or_default() += 1;
    }
    let (splittable, singles): (Vec<Record>, Vec<Record>) =
        records.iter().cloned().partition(|r| counts[r.label.as_str()] >= 2);
    let (mut train, test) = if splittable.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        split_stratified(&splittable, fraction, seed, cap)?
    };
    for r in &singles {
        eprintln!("warning: class `{}` has one record; kept for training only", r.label);
    }
    train.extend(singles);
    Ok((train, test))
}

pub fn prepare(args: PrepareArgs, m: &ArgMatches) -> Result<(), Failure> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref(), m)?;
    echo(&a);
    let records = load_records(need(&a.corpus, "--corpus")?)?;
    let dir = run_dir(&a.out_dir)?;
    let buckets = filter_and_bucket(&records);
    let mut outputs = vec!["buckets.json".to_string()];
    let mut splits = Vec::new();
    for id in 1..=3u8 {
        let bucket = buckets.get(id).expect("three buckets");
        let (train, test) = split_bucket(&bucket.records(), a.test_fraction, a.seed, a.train_cap)?;
        let sub = dir.join(format!("bucket{id}"));
        fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
        write_corpus(sub.join("train.tsv"), &train)?;
        write_corpus(sub.join("test.tsv"), &test)?;
        outputs.push(format!("bucket{id}/train.tsv"));
        outputs.push(format!("bucket{id}/test.tsv"));
        splits.push(json!({"bucket": id, "train": train.len(), "test": test.len()}));
        println!("bucket {id}: {} train, {} test", train.len(), test.len());
    }
    let r = buckets.report;
    println!(
        "kept {} of {} records ({} too short, {} too long)",
        r.kept, r.total, r.too_short, r.too_long
    );
    let manifest = json!({"buckets": buckets.manifest(), "splits": splits});
    write(
        &dir.join("buckets.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    let outputs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    finish(&dir, "prepare", &a, &outputs, manifest)
}

// ---------------------------------------------------------------- shared settings

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct ModelOpts {
    /// Width preset: desk (small, fast) or full
    #[arg(long, default_value = "desk")]
    dims: String,
    /// Override the preset's embedding width
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Override the preset's TextCNN filter count
    #[arg(long)]
    filters: Option<usize>,
    /// Override the preset's LSTM hidden size
    #[arg(long)]
    hidden: Option<usize>,
    /// Override the preset's dense head hidden width
    #[arg(long)]
    head_hidden: Option<usize>,
    /// Ensemble vote: soft or hard
    #[arg(long, default_value = "soft")]
    vote_mode: String,
    /// Kernel widths of the two TextCNN ensemble members
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [3, 5])]
    ensemble_widths: Vec<usize>,
    /// Require the exact 3 TextCNN + LSTM + Bi-LSTM mix and 25 classes for concat
    #[arg(long)]
    strict: bool,
}

impl ModelOpts {
    fn dims(&self) -> Result<Dims, Failure> {
        let mut d = match self.dims.as_str() {
            "desk" => Dims::desk(),
            "full" => Dims::full(),
            other => return Err(Failure::Usage(format!("--dims: unknown preset `{other}` (desk, full)"))),
        };
        d.embed_dim = self.embed_dim.unwrap_or(d.embed_dim);
        d.filters = self.filters.unwrap_or(d.filters);
        d.hidden = self.hidden.unwrap_or(d.hidden);
        d.head_hidden = self.head_hidden.unwrap_or(d.head_hidden);
        Ok(d)
    }

    fn vote_mode(&self) -> Result<VoteMode, Failure> {
        parse(&self.vote_mode, "--vote-mode")
    }

    fn widths(&self) -> Result<[usize; 2], Failure> {
        <[usize; 2]>::try_from(self.ensemble_widths.as_slice())
            .map_err(|_| Failure::Usage("--ensemble-widths takes exactly two widths".into()))
    }
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct TrainOpts {
    /// adam or sgd-momentum
    #[arg(long, default_value = "adam")]
    optimizer: String,
    /// Learning rate
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 30)]
    max_epochs: usize,
    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Arithmetic for training: f32 or f64 (checkpoints are always f32)
    #[arg(long, default_value = "f32")]
    precision: String,
    /// Global gradient-norm clip; 0 disables
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    /// Stop once validation accuracy reaches this fraction [default: off]
    #[arg(long)]
    target_accuracy: Option<f64>,
}

impl TrainOpts {
    fn config(&self, seed: u64) -> Result<TrainConfig, Failure> {
        let c = TrainConfig {
            optimizer: parse::<OptimizerKind>(&self.optimizer, "--optimizer")?,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            precision: parse::<Precision>(&self.precision, "--precision")?,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            target_accuracy: self.target_accuracy,
        };
        c.validate()?;
        Ok(c)
    }
}

fn network(kind: ModelKind, vocab: usize, classes: usize, dims: &Dims, opts: &ModelOpts) -> Result<NetworkConfig, Failure> {
    let widths = opts.widths()?;
    let net = match kind {
        ModelKind::Textcnn => NetworkConfig::textcnn(vocab, classes, dims, widths[0]),
        ModelKind::Bilstm => NetworkConfig::bilstm(vocab, classes, dims),
        ModelKind::Vgg => NetworkConfig::vgg(vocab, classes, dims),
        ModelKind::Concat => NetworkConfig {
            strict: opts.strict,
            ..NetworkConfig::concat(vocab, classes, dims)
        },
        ModelKind::Ensemble => unreachable!("ensembles are assembled from members"),
    };
    net.validate()?;
    Ok(net)
}

fn encode(records: &[Record], vocab: &Vocab, labels: &LabelTable, cap: usize) -> Result<Vec<EncodedRecord>, Failure> {
    Ok(encode_records(records, vocab, labels, cap)?)
}

// ---------------------------------------------------------------- train

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct TrainArgs {
    /// JSON settings file; flags override it
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Training corpus file; alternative to --data
    #[arg(long)]
    train: Option<PathBuf>,
    /// Directory written by `prepare`; trains on bucket<N>/train.tsv
    #[arg(long)]
    data: Option<PathBuf>,
    /// Bucket used with --data: 1 all, 2 short, 3 long
    #[arg(long, default_value_t = 1)]
    bucket: u8,
    /// Validation corpus file [default: carved from the training data]
    #[arg(long)]
    val: Option<PathBuf>,
    /// Share of training records carved out for validation when --val is absent; 0 uses training accuracy
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Vocabulary file written by `vocab` [required]
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Run directory; receives model.ctcm, metrics.jsonl and manifest.json [required]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// textcnn, bilstm, vgg, ensemble or concat
    #[arg(long, default_value = "concat")]
    kind: String,
    /// Seed for initialization, batch order and the validation split
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Characters kept per record
    #[arg(long, default_value_t = MAX_LEN)]
    max_len: usize,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    #[serde(flatten)]
    opts: TrainOpts,
}

pub fn train(args: TrainArgs, m: &ArgMatches) -> Result<(), Failure> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref(), m)?;
    echo(&a);
    let kind: ModelKind = parse(&a.kind, "--kind")?;
    let dims = a.model.dims()?;
    let tc = a.opts.config(a.seed)?;
    let vote = a.model.vote_mode()?;
    let train_path = match (&a.train, &a.data) {
        (Some(p), None) => p.clone(),
        (None, Some(d)) => bucket_dir(d, a.bucket)?.join("train.tsv"),
        _ => return Err(Failure::Usage("give exactly one of --train and --data".into())),
    };
    let vocab = load_vocab(&a.vocab)?;
    let mut train_records = load_records(&train_path)?;
    let val_records = match &a.val {
        Some(p) => load_records(p)?,
        None if a.val_fraction > 0.0 => {
            let (tr, va) = split_bucket(&train_records, a.val_fraction, a.seed, None)?;
            train_records = tr;
            va
        }
        None => Vec::new(),
    };
    let dir = run_dir(&a.out_dir)?;
    let labels = LabelTable::from_records(&train_records);
    let tr = encode(&train_records, &vocab, &labels, a.max_len)?;
    let va = encode(&val_records, &vocab, &labels, a.max_len)?;
    eprintln!(
        "{} training / {} validation records, {} classes, vocabulary {}",
        tr.len(),
        va.len(),
        labels.len(),
        vocab.len()
    );

    let mut metrics = String::new();
    let mut log = |member: Option<&str>, r: &EpochRecord| {
        let mut line = serde_json::to_value(r).expect("record serializes");
        if let Some(name) = member {
            line["member"] = json!(name);
        }
        let _ = writeln!(metrics, "{line}");
        eprintln!(
            "{}epoch {:>3}  loss {:.4}  train {:.4}  val {:.4}  {:.1}s",
            member.map(|n| format!("[{n}] ")).unwrap_or_default(),
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.val_acc,
            r.seconds
        );
    };
    let (v, k) = (vocab.len(), labels.len());
    let (classifier, summary): (Classifier<f32>, Value) = if kind == ModelKind::Ensemble {
        let widths = a.model.widths()?;
        let members = [
            (format!("textcnn{}", widths[0]), NetworkConfig::textcnn(v, k, &dims, widths[0])),
            (format!("textcnn{}", widths[1]), NetworkConfig::textcnn(v, k, &dims, widths[1])),
            ("bilstm".to_string(), NetworkConfig::bilstm(v, k, &dims)),
        ];
        let mut models = Vec::new();
        let mut best = Vec::new();
        for (name, net) in &members {
            let (model, h) = fit_network(net, a.seed, &tr, &va, &tc, &mut |r| log(Some(name), r))?;
            best.push(json!({"member": name, "best_epoch": h.best_epoch, "best_val_acc": h.best_val_acc}));
            models.push(model);
        }
        let weigh_on = if va.is_empty() { &tr } else { &va };
        let (e, accs) = weighted_ensemble(models, weigh_on, vote, 64)?;
        let summary = json!({"members": best, "member_accuracies": accs, "weights": e.weights()});
        (e.into(), summary)
    } else {
        let net = network(kind, v, k, &dims, &a.model)?;
        let (model, h) = fit_network(&net, a.seed, &tr, &va, &tc, &mut |r| log(None, r))?;
        (model.into(), json!({"best_epoch": h.best_epoch, "best_val_acc": h.best_val_acc, "epochs": h.epochs.len()}))
    };
    save_checkpoint(dir.join("model.ctcm"), &classifier, &labels, vocab.digest())?;
    write(&dir.join("metrics.jsonl"), metrics)?;
    println!("{} parameters; checkpoint {}", classifier.param_count(), dir.join("model.ctcm").display());
    let mut summary = summary;
    summary["params"] = json!(classifier.param_count());
    summary["vocab_digest"] = json!(format!("{:016x}", vocab.digest()));
    finish(&dir, "train", &a, &["model.ctcm", "metrics.jsonl"], summary)
}

// ---------------------------------------------------------------- eval

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct EvalArgs {
    /// JSON settings file; flags override it
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Checkpoint written by `train` [required]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Vocabulary the checkpoint was trained with [required]
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Labeled corpus file to score [required]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory; receives eval.json [required]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Characters kept per record
    #[arg(long, default_value_t = MAX_LEN)]
    max_len: usize,
}

pub fn eval(args: EvalArgs, m: &ArgMatches) -> Result<(), Failure> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref(), m)?;
    echo(&a);
    let vocab = load_vocab(&a.vocab)?;
    let ck = load_checkpoint(need(&a.checkpoint, "--checkpoint")?, Some(vocab.digest()))?;
    let records = load_records(need(&a.data, "--data")?)?;
    let dir = run_dir(&a.out_dir)?;
    let data = encode(&records, &vocab, &ck.labels, a.max_len)?;
    let pred = predict_records(&ck.classifier, &data, a.batch_size, threads())?;
    let correct = pred.labels.iter().zip(&data).filter(|(p, r)| **p == r.label).count();
    let acc = correct as f64 / data.len() as f64;
    println!("accuracy {acc:.4} ({correct}/{})", data.len());
    let summary = json!({"records": data.len(), "correct": correct, "accuracy": acc});
    write(&dir.join("eval.json"), serde_json::to_string_pretty(&summary).expect("serializes") + "\n")?;
    finish(&dir, "eval", &a, &["eval.json"], summary)
}

// ---------------------------------------------------------------- predict

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct PredictArgs {
    /// JSON settings file; flags override it
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Checkpoint written by `train` [required]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Vocabulary the checkpoint was trained with [required]
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Corpus file to label; its labels are ignored [required]
    #[arg(long)]
    input: Option<PathBuf>,
    /// Run directory; receives predictions.tsv (`label<TAB>confidence` per input record) [required]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Characters kept per record
    #[arg(long, default_value_t = MAX_LEN)]
    max_len: usize,
}

pub fn predict(args: PredictArgs, m: &ArgMatches) -> Result<(), Failure> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref(), m)?;
    echo(&a);
    let vocab = load_vocab(&a.vocab)?;
    let ck = load_checkpoint(need(&a.checkpoint, "--checkpoint")?, Some(vocab.digest()))?;
    let records = load_records(need(&a.input, "--input")?)?;
    let dir = run_dir(&a.out_dir)?;
    let data: Vec<EncodedRecord> = records
        .iter()
        .map(|r| EncodedRecord {
            ids: vocab.encode(&r.text, a.max_len),
            label: 0,
        })
        .collect();
    let pred = predict_records(&ck.classifier, &data, a.batch_size, threads())?;
    let mut out = String::new();
    for (&label, conf) in pred.labels.iter().zip(pred.confidences()) {
        let name = ck.labels.name(label).expect("label in table");
        let _ = writeln!(out, "{name}\t{conf:.6}");
    }
    write(&dir.join("predictions.tsv"), out)?;
    println!("labeled {} records", data.len());
    finish(&dir, "predict", &a, &["predictions.tsv"], json!({"records": data.len()}))
}

// ---------------------------------------------------------------- bench

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct BenchArgs {
    /// JSON settings file; flags override it
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Checkpoint written by `train` [required]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Vocabulary the checkpoint was trained with [required]
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Corpus file to label [default: synthetic records]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of synthetic records when --data is absent
    #[arg(long, default_value_t = 30000)]
    records: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Run directory; receives bench.json [required]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Characters kept per record
    #[arg(long, default_value_t = MAX_LEN)]
    max_len: usize,
}

fn synthetic_records(n: usize) -> Result<Vec<Record>, Failure> {
    let classes = 5;
    let mut recs = synth::generate(&SynthConfig {
        classes,
        per_class: n.div_ceil(classes).max(1),
        ..SynthConfig::default()
    })?;
    recs.truncate(n);
    Ok(recs)
}

pub fn bench(args: BenchArgs, m: &ArgMatches) -> Result<(), Failure> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref(), m)?;
    echo(&a);
    let vocab = load_vocab(&a.vocab)?;
    let checkpoint = need(&a.checkpoint, "--checkpoint")?;
    let records = match &a.data {
        Some(p) => load_records(p)?,
        None => synthetic_records(a.records)?,
    };
    let dir = run_dir(&a.out_dir)?;
    let data: Vec<EncodedRecord> = records
        .iter()
        .map(|r| EncodedRecord {
            ids: vocab.encode(&r.text, a.max_len),
            label: 0,
        })
        .collect();
    let report = bench_predict(checkpoint, &data, a.batch_size, Some(vocab.digest()))?;
    print!("{}", report.render());
    let summary = serde_json::to_value(&report).expect("report serializes");
    write(&dir.join("bench.json"), serde_json::to_string_pretty(&summary).expect("serializes") + "\n")?;
    finish(&dir, "bench", &a, &["bench.json"], summary)
}

// ---------------------------------------------------------------- compare

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct CompareArgs {
    /// JSON settings file; flags override it
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Directory written by `prepare`
    #[arg(long)]
    data: Option<PathBuf>,
    /// Bucket used with --data: 1 all, 2 short, 3 long
    #[arg(long, default_value_t = 1)]
    bucket: u8,
    /// Vocabulary file [default: built from the training split]
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Use the synthetic dual-signal corpus instead of --data
    #[arg(long)]
    synthetic: bool,
    /// Synthetic training records
    #[arg(long, default_value_t = 2000)]
    synth_train: usize,
    /// Synthetic validation records
    #[arg(long, default_value_t = 200)]
    synth_val: usize,
    /// Synthetic test records
    #[arg(long, default_value_t = 500)]
    synth_test: usize,
    /// Synthetic corpus seed
    #[arg(long, default_value_t = 0)]
    synth_seed: u64,
    /// Model kinds, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = ModelKind::ALL.map(|k| k.name().to_string()))]
    kinds: Vec<String>,
    /// Training seeds, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    /// Share of training records carved out for validation with --data; 0 uses training accuracy
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Table title [default: "Data set <bucket>" or "Synthetic corpus"]
    #[arg(long)]
    title: Option<String>,
    /// Run directory; receives report.txt, report.csv, accuracy.txt, report.json [required]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Batch size for scoring
    #[arg(long, default_value_t = 64)]
    eval_batch: usize,
    /// Characters kept per record
    #[arg(long, default_value_t = MAX_LEN)]
    max_len: usize,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    #[serde(flatten)]
    opts: TrainOpts,
}

fn prepared_compare_data(a: &CompareArgs, data_dir: &Path) -> Result<CompareData, Failure> {
    let dir = bucket_dir(data_dir, a.bucket)?;
    let mut train = load_records(&dir.join("train.tsv"))?;
    let test = load_records(&dir.join("test.tsv"))?;
    let val = if a.val_fraction > 0.0 {
        let (tr, va) = split_bucket(&train, a.val_fraction, 0, None)?;
        train = tr;
        va
    } else {
        Vec::new()
    };
    let vocab = match &a.vocab {
        Some(_) => load_vocab(&a.vocab)?,
        None => build_vocab(&train, 1)?,
    };
    let labels = LabelTable::from_records(&train);
    Ok(CompareData {
        train: encode(&train, &vocab, &labels, a.max_len)?,
        val: encode(&val, &vocab, &labels, a.max_len)?,
        test: encode(&test, &vocab, &labels, a.max_len)?,
        vocab_size: vocab.len(),
        num_classes: labels.len(),
    })
}

pub fn compare(args: CompareArgs, m: &ArgMatches) -> Result<(), Failure> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref(), m)?;
    echo(&a);
    let kinds = a
        .kinds
        .iter()
        .map(|k| parse::<ModelKind>(k, "--kinds"))
        .collect::<Result<Vec<_>, _>>()?;
    let data = match (&a.data, a.synthetic) {
        (Some(d), false) => prepared_compare_data(&a, d)?,
        (None, true) => {
            synthetic_compare_data(&SyntheticSplits {
                train: a.synth_train,
                val: a.synth_val,
                test: a.synth_test,
                seed: a.synth_seed,
                ..SyntheticSplits::default()
            })?
            .0
        }
        _ => return Err(Failure::Usage("give exactly one of --data and --synthetic".into())),
    };
    let dir = run_dir(&a.out_dir)?;
    let title = a.title.clone().unwrap_or_else(|| {
        if a.synthetic {
            "Synthetic corpus".to_string()
        } else {
            format!("Data set {}", a.bucket)
        }
    });
    let cc = CompareConfig {
        kinds,
        seeds: a.seeds.clone(),
        dims: a.model.dims()?,
        train: a.opts.config(0)?,
        vote_mode: a.model.vote_mode()?,
        ensemble_widths: a.model.widths()?,
        eval_batch: a.eval_batch,
    };
    let report = compare_report(&title, &data, &cc, &mut |p| match p {
        Progress::Epoch { model, seed, record } => eprintln!(
            "[{model} seed {seed}] epoch {:>3}  loss {:.4}  val {:.4}",
            record.epoch, record.train_loss, record.val_acc
        ),
        Progress::Scored { kind, seed, accuracy } => {
            eprintln!("{} seed {seed}: test accuracy {accuracy:.4}", kind.display_name())
        }
    })?;
    let table = report.render_text(true);
    print!("{table}");
    write(&dir.join("report.txt"), &table)?;
    write(&dir.join("accuracy.txt"), report.render_text(false))?;
    write(&dir.join("report.csv"), report.to_csv(true))?;
    let summary = serde_json::to_value(&report).expect("report serializes");
    write(&dir.join("report.json"), serde_json::to_string_pretty(&summary).expect("serializes") + "\n")?;
    let means: Vec<Value> = report
        .rows
        .iter()
        .map(|r| json!({"kind": r.kind.name(), "mean_accuracy": r.mean_accuracy, "accuracies": r.accuracies}))
        .collect();
    finish(
        &dir,
        "compare",
        &a,
        &["report.txt", "accuracy.txt", "report.csv", "report.json"],
        json!({ "rows": means }),
    )
}

// ---------------------------------------------------------------- synth

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct SynthArgs {
    /// JSON settings file; flags override it
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Run directory; receives corpus.tsv [required]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of classes (2 to 5)
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 48)]
    min_len: usize,
    #[arg(long, default_value_t = 96)]
    max_len: usize,
    /// Filler alphabet size
    #[arg(long, default_value_t = 40)]
    filler: usize,
    /// Share of documents carrying only the local cue
    #[arg(long, default_value_t = 0.4)]
    local_only: f64,
    /// Share of documents carrying only the long-range cue
    #[arg(long, default_value_t = 0.4)]
    order_only: f64,
    /// Document seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cue-assignment seed; corpora sharing it share their cues
    #[arg(long, default_value_t = 0)]
    cue_seed: u64,
}

pub fn synth(args: SynthArgs, m: &ArgMatches) -> Result<(), Failure> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref(), m)?;
    echo(&a);
    let records = synth::generate(&SynthConfig {
        classes: a.classes,
        per_class: a.per_class,
        min_len: a.min_len,
        max_len: a.max_len,
        filler: a.filler,
        local_only: a.local_only,
        order_only: a.order_only,
        seed: a.seed,
        cue_seed: a.cue_seed,
    })?;
    let dir = run_dir(&a.out_dir)?;
    write_corpus(dir.join("corpus.tsv"), &records)?;
    println!("wrote {} records", records.len());
    finish(&dir, "synth", &a, &["corpus.tsv"], json!({"records": records.len()}))
}
