//! Corpus ingestion, length filtering and bucketing, the character
//! vocabulary, batch encoding and stratified splitting.

mod bucket;
pub mod synth;
mod vocab;

pub use bucket::{filter_and_bucket, BucketManifest, Buckets, DatasetBucket, DropReport, MAX_LEN, MIN_LEN, SHORT_MAX_LEN};
pub use vocab::{build_vocab, Vocab, PAD_TOKEN, UNK_INDEX, UNK_TOKEN};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CorpusError;
use crate::layers::PAD_INDEX;

/// A labeled document.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Record {
    pub label: String,
    pub text: String,
    /// Number of Unicode code points in `text`.
    pub length: usize,
}

impl Record {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            label: label.into(),
            length: text.chars().count(),
            text,
        }
    }
}

/// Records read from a corpus file, plus the count of skipped lines.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub records: Vec<Record>,
    pub malformed: usize,
}

fn parse_line(line: &[u8]) -> Option<Record> {
    let line = std::str::from_utf8(line).ok()?;
    let line = line.strip_suffix('\r').unwrap_or(line);
    let (label, text) = line.split_once('\t')?;
    if label.is_empty() || text.contains('\t') {
        return None;
    }
    Some(Record::new(label, text))
}

/// Reads a UTF-8 `label<TAB>text` file. Malformed lines are skipped and
/// counted; blank lines are ignored.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    let mut malformed = 0;
    for line in bytes.split(|&b| b == b'\n') {
        if line.is_empty() || line == b"\r" {
            continue;
        }
        match parse_line(line) {
            Some(r) => records.push(r),
            None => malformed += 1,
        }
    }
    if records.is_empty() {
        return Err(CorpusError::NoRecords {
            path: path.to_path_buf(),
            malformed,
        });
    }
    Ok(Corpus { records, malformed })
}

/// Writes records in the `label<TAB>text` corpus format.
pub fn write_corpus(path: impl AsRef<Path>, records: &[Record]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        if r.label.contains(['\t', '\n']) || r.text.contains(['\t', '\n']) {
            return Err(CorpusError::Invalid(format!(
                "record labelled `{}` contains a TAB or newline",
                r.label
            )));
        }
        out.push_str(&r.label);
        out.push('\t');
        out.push_str(&r.text);
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(out.as_bytes()).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Stable mapping from category names to class indices (sorted by name).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTable {
    names: Vec<String>,
}

impl LabelTable {
    pub fn new(mut names: Vec<String>) -> Self {
        names.sort();
        names.dedup();
        Self { names }
    }

    pub fn from_records(records: &[Record]) -> Self {
        Self::new(records.iter().map(|r| r.label.clone()).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, label: &str) -> Result<usize, CorpusError> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(label))
            .map_err(|_| CorpusError::UnknownLabel(label.to_string()))
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }
}

/// One document as vocabulary indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EncodedRecord {
    pub ids: Vec<usize>,
    pub label: usize,
}

/// A right-padded `[batch, time]` id matrix with labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedBatch {
    /// Row-major `[batch, time]`; positions past a record's length are PAD.
    pub ids: Vec<usize>,
    pub batch: usize,
    pub time: usize,
    pub labels: Vec<usize>,
    /// Unpadded lengths.
    pub lengths: Vec<usize>,
}

impl EncodedBatch {
    /// Pads every record to the longest one, and to at least `min_time`
    /// (itself at least 1).
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a EncodedRecord>, min_time: usize) -> Self {
        let records: Vec<&EncodedRecord> = records.into_iter().collect();
        let time = records
            .iter()
            .map(|r| r.ids.len())
            .max()
            .unwrap_or(0)
            .max(min_time)
            .max(1);
        let mut ids = Vec::with_capacity(records.len() * time);
        for r in &records {
            ids.extend_from_slice(&r.ids);
            ids.resize(ids.len() + time - r.ids.len(), PAD_INDEX);
        }
        Self {
            ids,
            batch: records.len(),
            time,
            labels: records.iter().map(|r| r.label).collect(),
            lengths: records.iter().map(|r| r.ids.len()).collect(),
        }
    }

    /// Extends the time axis with PAD up to `time`.
    pub fn pad_to(&self, time: usize) -> Self {
        if time <= self.time {
            return self.clone();
        }
        let mut ids = Vec::with_capacity(self.batch * time);
        for row in self.ids.chunks(self.time) {
            ids.extend_from_slice(row);
            ids.resize(ids.len() + time - self.time, PAD_INDEX);
        }
        Self {
            ids,
            time,
            ..self.clone()
        }
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.time..(b + 1) * self.time]
    }
}

/// Encodes every record: unknown characters map to UNK, text is cut at
/// `cap` characters, labels go through `labels`.
pub fn encode_records(
    records: &[Record],
    vocab: &Vocab,
    labels: &LabelTable,
    cap: usize,
) -> Result<Vec<EncodedRecord>, CorpusError> {
    if cap == 0 {
        return Err(CorpusError::Invalid("length cap must be ≥ 1".into()));
    }
    records
        .iter()
        .map(|r| {
            Ok(EncodedRecord {
                ids: vocab.encode(&r.text, cap),
                label: labels.index(&r.label)?,
            })
        })
        .collect()
}

/// Encodes `records` into one padded batch.
pub fn encode_batch(
    records: &[Record],
    vocab: &Vocab,
    labels: &LabelTable,
    cap: usize,
) -> Result<EncodedBatch, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::Empty("batch has no records"));
    }
    let encoded = encode_records(records, vocab, labels, cap)?;
    Ok(EncodedBatch::from_records(&encoded, 1))
}

/// Per-class random split.
///
/// Each class contributes `round(n · test_fraction)` records to the test side
/// (at least one, and at least one left for training). `train_cap` limits
/// the training records kept per class.
pub fn split_stratified(
    records: &[Record],
    test_fraction: f64,
    seed: u64,
    train_cap: Option<usize>,
) -> Result<(Vec<Record>, Vec<Record>), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::Invalid(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: BTreeMap<&str, Vec<&Record>> = BTreeMap::new();
    for r in records {
        by_class.entry(&r.label).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut members) in by_class {
        let n = members.len();
        if n < 2 {
            return Err(CorpusError::ClassTooSmall {
                label: label.to_string(),
                count: n,
            });
        }
        members.shuffle(&mut rng);
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        let (te, tr) = members.split_at(n_test);
        test.extend(te.iter().map(|&r| r.clone()));
        let keep = train_cap.unwrap_or(usize::MAX).min(tr.len());
        train.extend(tr[..keep].iter().map(|&r| r.clone()));
    }
    Ok((train, test))
}
