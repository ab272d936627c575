use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Record;

/// Records shorter than this are dropped.
pub const MIN_LEN: usize = 10;
/// Records longer than this are dropped.
pub const MAX_LEN: usize = 5000;
/// Longest record counted as short text; long text starts above it.
pub const SHORT_MAX_LEN: usize = 500;

/// One length-bounded data set, grouped by class.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBucket {
    /// 1 = all kept text, 2 = short text, 3 = long text.
    pub id: u8,
    /// Nominal lower bound on length.
    pub min_len: usize,
    /// Whether `min_len` itself belongs to the bucket (false only for the
    /// long-text bucket, which starts strictly above 500).
    pub min_inclusive: bool,
    pub max_len: usize,
    pub classes: BTreeMap<String, Vec<Record>>,
}

impl DatasetBucket {
    fn empty(id: u8, min_len: usize, min_inclusive: bool, max_len: usize) -> Self {
        Self {
            id,
            min_len,
            min_inclusive,
            max_len,
            classes: BTreeMap::new(),
        }
    }

    pub fn contains_length(&self, len: usize) -> bool {
        let above = if self.min_inclusive { len >= self.min_len } else { len > self.min_len };
        above && len <= self.max_len
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every record, class by class in label order.
    pub fn records(&self) -> Vec<Record> {
        self.classes.values().flatten().cloned().collect()
    }

    fn push(&mut self, r: &Record) {
        self.classes.entry(r.label.clone()).or_default().push(r.clone());
    }
}

/// Why records were dropped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub total: usize,
    pub kept: usize,
    pub too_short: usize,
    pub too_long: usize,
}

impl DropReport {
    pub fn dropped(&self) -> usize {
        self.too_short + self.too_long
    }
}

/// The three data sets and the drop report.
#[derive(Clone, Debug, PartialEq)]
pub struct Buckets {
    pub all: DatasetBucket,
    pub short: DatasetBucket,
    pub long: DatasetBucket,
    pub report: DropReport,
}

impl Buckets {
    pub fn get(&self, id: u8) -> Option<&DatasetBucket> {
        match id {
            1 => Some(&self.all),
            2 => Some(&self.short),
            3 => Some(&self.long),
            _ => None,
        }
    }

    pub fn manifest(&self) -> BucketManifest {
        let entry = |b: &DatasetBucket| BucketEntry {
            id: b.id,
            min_length: b.min_len,
            min_inclusive: b.min_inclusive,
            max_length: b.max_len,
            total: b.len(),
            per_class: b.classes.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
        };
        BucketManifest {
            buckets: vec![entry(&self.all), entry(&self.short), entry(&self.long)],
            drops: self.report,
        }
    }
}

/// Serializable summary of a bucketing run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketManifest {
    pub buckets: Vec<BucketEntry>,
    pub drops: DropReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketEntry {
    pub id: u8,
    pub min_length: usize,
    pub min_inclusive: bool,
    pub max_length: usize,
    pub total: usize,
    pub per_class: BTreeMap<String, usize>,
}

/// Drops records outside `[10, 5000]` and splits the rest into short
/// (`≤ 500`) and long (`> 500`) text.
pub fn filter_and_bucket(records: &[Record]) -> Buckets {
    let mut all = DatasetBucket::empty(1, MIN_LEN, true, MAX_LEN);
    let mut short = DatasetBucket::empty(2, MIN_LEN, true, SHORT_MAX_LEN);
    let mut long = DatasetBucket::empty(3, SHORT_MAX_LEN, false, MAX_LEN);
    let mut report = DropReport {
        total: records.len(),
        ..DropReport::default()
    };
    for r in records {
        if r.length < MIN_LEN {
            report.too_short += 1;
            continue;
        }
        if r.length > MAX_LEN {
            report.too_long += 1;
            continue;
        }
        report.kept += 1;
        all.push(r);
        if r.length <= SHORT_MAX_LEN {
            short.push(r);
        } else {
            long.push(r);
        }
    }
    Buckets {
        all,
        short,
        long,
        report,
    }
}
