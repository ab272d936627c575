//! Multi-seed model comparison: trains every requested model kind per seed,
//! scores it on the test split and renders an accuracy/timing table.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::synth::{self, SynthConfig};
use crate::corpus::{build_vocab, encode_records, EncodedRecord, LabelTable, Vocab};
use crate::error::{CorpusError, TrainError};
use crate::models::{Classifier, Dims, Model, ModelKind, NetworkConfig, VoteMode};
use crate::train::{evaluate, fit_network, predict_records, weighted_ensemble, EpochRecord, TrainConfig};

/// Encoded splits shared by every model in a comparison.
#[derive(Clone, Debug)]
pub struct CompareData {
    pub train: Vec<EncodedRecord>,
    /// Early stopping and ensemble weights.
    pub val: Vec<EncodedRecord>,
    pub test: Vec<EncodedRecord>,
    pub vocab_size: usize,
    pub num_classes: usize,
}

/// Record counts for [`synthetic_compare_data`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSplits {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub classes: usize,
    /// Shared cue assignment; each split draws its own documents.
    pub seed: u64,
}

impl Default for SyntheticSplits {
    fn default() -> Self {
        Self {
            train: 2000,
            val: 200,
            test: 500,
            classes: 5,
            seed: 0,
        }
    }
}

/// Train, validation and test splits drawn from the synthetic dual-signal
/// corpus: independent documents, one shared cue table. The vocabulary and
/// label table come from the training split.
pub fn synthetic_compare_data(splits: &SyntheticSplits) -> Result<(CompareData, Vocab, LabelTable), CorpusError> {
    let draw = |n: usize, stream: u64| {
        if n % splits.classes != 0 {
            return Err(CorpusError::Invalid(format!(
                "{n} records do not divide evenly into {} classes",
                splits.classes
            )));
        }
        synth::generate(&SynthConfig {
            classes: splits.classes,
            per_class: n / splits.classes,
            seed: splits.seed.wrapping_mul(3).wrapping_add(stream),
            cue_seed: splits.seed,
            ..SynthConfig::default()
        })
    };
    let train = draw(splits.train, 0)?;
    let test = draw(splits.test, 1)?;
    let val = if splits.val == 0 { Vec::new() } else { draw(splits.val, 2)? };
    let vocab = build_vocab(&train, 1)?;
    let labels = LabelTable::from_records(&train);
    let cap = SynthConfig::default().max_len;
    let data = CompareData {
        train: encode_records(&train, &vocab, &labels, cap)?,
        val: encode_records(&val, &vocab, &labels, cap)?,
        test: encode_records(&test, &vocab, &labels, cap)?,
        vocab_size: vocab.len(),
        num_classes: labels.len(),
    };
    Ok((data, vocab, labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub kinds: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    pub dims: Dims,
    /// Training settings; `seed` is replaced by each run's seed.
    pub train: TrainConfig,
    pub vote_mode: VoteMode,
    /// Kernel widths of the two TextCNN ensemble members.
    pub ensemble_widths: [usize; 2],
    pub eval_batch: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            kinds: ModelKind::ALL.to_vec(),
            seeds: vec![1, 2, 3],
            dims: Dims::desk(),
            train: TrainConfig::default(),
            vote_mode: VoteMode::Soft,
            ensemble_widths: [3, 5],
            eval_batch: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: ModelKind,
    /// Test accuracy per seed, in seed order.
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub params: usize,
    /// Mean seconds to label the whole test split.
    pub predict_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub title: String,
    pub seeds: Vec<u64>,
    pub test_records: usize,
    pub rows: Vec<ReportRow>,
}

/// Progress notifications from [`compare_report`].
#[derive(Clone, Debug)]
pub enum Progress<'a> {
    Epoch {
        model: &'a str,
        seed: u64,
        record: &'a EpochRecord,
    },
    Scored {
        kind: ModelKind,
        seed: u64,
        accuracy: f64,
    },
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn network_for(kind: ModelKind, data: &CompareData, dims: &Dims) -> Option<NetworkConfig> {
    let (v, k) = (data.vocab_size, data.num_classes);
    match kind {
        ModelKind::Textcnn => Some(NetworkConfig::textcnn(v, k, dims, 3)),
        ModelKind::Bilstm => Some(NetworkConfig::bilstm(v, k, dims)),
        ModelKind::Vgg => Some(NetworkConfig::vgg(v, k, dims)),
        ModelKind::Concat => Some(NetworkConfig::concat(v, k, dims)),
        ModelKind::Ensemble => None,
    }
}

/// Trains and scores every kind for every seed.
///
/// Networks are cached by (architecture, seed), so the ensemble reuses the
/// TextCNN and Bi-LSTM baselines trained for the same seed.
pub fn compare_report(
    title: &str,
    data: &CompareData,
    config: &CompareConfig,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<CompareReport, TrainError> {
    if config.kinds.is_empty() || config.seeds.is_empty() {
        return Err(TrainError::Config("need at least one model kind and one seed".into()));
    }
    if data.test.is_empty() || data.train.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mut cache: HashMap<(String, u64), Model<f32>> = HashMap::new();
    let mut fit = |net: &NetworkConfig, seed: u64, progress: &mut dyn FnMut(Progress<'_>)| {
        let key = (serde_json::to_string(net).expect("config serializes"), seed);
        if let Some(m) = cache.get(&key) {
            return Ok::<_, TrainError>(m.clone());
        }
        let tc = TrainConfig {
            seed,
            ..config.train.clone()
        };
        let name = net.subnets.iter().map(|s| s.kind_name()).collect::<Vec<_>>().join("+");
        let (m, _) = fit_network(net, seed, &data.train, &data.val, &tc, &mut |record| {
            progress(Progress::Epoch {
                model: &name,
                seed,
                record,
            })
        })?;
        cache.insert(key, m.clone());
        Ok(m)
    };
    let mut rows = Vec::with_capacity(config.kinds.len());
    for &kind in &config.kinds {
        let mut accuracies = Vec::with_capacity(config.seeds.len());
        let mut seconds = Vec::with_capacity(config.seeds.len());
        let mut params = 0;
        for &seed in &config.seeds {
            let classifier: Classifier<f32> = match network_for(kind, data, &config.dims) {
                Some(net) => fit(&net, seed, progress)?.into(),
                None => {
                    let (v, k, d) = (data.vocab_size, data.num_classes, &config.dims);
                    let members = vec![
                        fit(&NetworkConfig::textcnn(v, k, d, config.ensemble_widths[0]), seed, progress)?,
                        fit(&NetworkConfig::textcnn(v, k, d, config.ensemble_widths[1]), seed, progress)?,
                        fit(&NetworkConfig::bilstm(v, k, d), seed, progress)?,
                    ];
                    let val = if data.val.is_empty() { &data.train } else { &data.val };
                    weighted_ensemble(members, val, config.vote_mode, config.eval_batch)?.0.into()
                }
            };
            params = classifier.param_count();
            let accuracy = evaluate(&classifier, &data.test, config.eval_batch)?;
            let start = Instant::now();
            predict_records(&classifier, &data.test, config.eval_batch, 1)?;
            seconds.push(start.elapsed().as_secs_f64());
            progress(Progress::Scored { kind, seed, accuracy });
            accuracies.push(accuracy);
        }
        rows.push(ReportRow {
            kind,
            mean_accuracy: mean(&accuracies),
            accuracies,
            params,
            predict_seconds: mean(&seconds),
        });
    }
    Ok(CompareReport {
        title: title.to_string(),
        seeds: config.seeds.clone(),
        test_records: data.test.len(),
        rows,
    })
}

impl CompareReport {
    pub fn row(&self, kind: ModelKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    /// Aligned text table. Without `timing` the output depends only on the
    /// accuracies, so identical runs render identically.
    pub fn render_text(&self, timing: bool) -> String {
        let mut header: Vec<String> = vec!["Model".into()];
        header.extend(self.seeds.iter().map(|s| format!("seed {s}")));
        header.push("Average Test_acc".into());
        header.push("Params".into());
        if timing {
            header.push(format!("Time for {} predictions (s)", self.test_records));
        }
        let mut lines = vec![header];
        for r in &self.rows {
            let mut cells = vec![r.kind.display_name().to_string()];
            cells.extend(r.accuracies.iter().map(|a| format!("{:.2}%", a * 100.0)));
            cells.push(format!("{:.2}%", r.mean_accuracy * 100.0));
            cells.push(r.params.to_string());
            if timing {
                cells.push(format!("{:.3}", r.predict_seconds));
            }
            lines.push(cells);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| {
                    if c == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out
    }

    /// CSV twin of the text table with full-precision accuracies.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("model");
        for s in &self.seeds {
            let _ = write!(out, ",seed_{s}");
        }
        out.push_str(",mean_accuracy,params");
        if timing {
            out.push_str(",predict_seconds");
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(r.kind.name());
            for a in &r.accuracies {
                let _ = write!(out, ",{a}");
            }
            let _ = write!(out, ",{},{}", r.mean_accuracy, r.params);
            if timing {
                let _ = write!(out, ",{}", r.predict_seconds);
            }
            out.push('\n');
        }
        out
    }
}
