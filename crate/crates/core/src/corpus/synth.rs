//! Synthetic labeled corpora with planted class signals.
//!
//! Each document is filler characters carrying up to two kinds of evidence
//! about its class:
//!
//! * a **local cue**: a class-specific three-character sequence written
//!   somewhere in the text. The cue characters also occur as ordinary
//!   filler, so only the exact run identifies the class.
//! * a **long-range cue**: three marker characters that appear exactly once
//!   each, far apart; the class is encoded by the order in which they occur.
//!
//! A document carries the local cue only, the long-range cue only, or both.
//! Where a cue is absent, its neutral variant (a sequence / an order no
//! class uses) takes its place, so presence alone reveals nothing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Record;
use crate::error::CorpusError;

/// Category names used for synthetic labels.
pub const CATEGORY_NAMES: [&str; 25] = [
    "society",
    "finance",
    "international",
    "sports",
    "technology",
    "current-events",
    "entertainment",
    "education",
    "health",
    "military",
    "automobile",
    "real-estate",
    "travel",
    "culture",
    "games",
    "fashion",
    "food",
    "agriculture",
    "law",
    "environment",
    "science",
    "history",
    "parenting",
    "religion",
    "weather",
];

const FILLER_START: u32 = 0x4E00;
const MARKERS: [char; 3] = ['甲', '乙', '丙'];
const ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Filler alphabet size (the cue characters are part of it).
    pub filler: usize,
    /// Share of documents carrying only the local cue.
    pub local_only: f64,
    /// Share of documents carrying only the long-range cue.
    pub order_only: f64,
    /// Seed for the documents.
    pub seed: u64,
    /// Seed for the cue assignment; corpora sharing it share their cues.
    pub cue_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 100,
            min_len: 48,
            max_len: 96,
            filler: 40,
            local_only: 0.4,
            order_only: 0.4,
            seed: 0,
            cue_seed: 0,
        }
    }
}

/// Which cues a document carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Evidence {
    Local,
    Order,
    Both,
}

/// The cue assignment shared by every corpus with the same `cue_seed`.
#[derive(Clone, Debug)]
pub struct CueTable {
    pub filler: Vec<char>,
    /// `local[c]` for class `c`; the last entry is the neutral sequence.
    pub local: Vec<[char; 3]>,
}

impl CueTable {
    pub fn new(config: &SynthConfig) -> Result<Self, CorpusError> {
        if config.classes < 2 || config.classes > 5 {
            return Err(CorpusError::Invalid(format!(
                "synthetic corpora support 2..=5 classes (six marker orders), got {}",
                config.classes
            )));
        }
        if config.filler < 4 {
            return Err(CorpusError::Invalid("filler alphabet needs at least 4 characters".into()));
        }
        let filler: Vec<char> = (0..config.filler as u32)
            .map(|i| char::from_u32(FILLER_START + 1 + i).expect("CJK block"))
            .filter(|c| !MARKERS.contains(c))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.cue_seed ^ 0x9e37_79b9_7f4a_7c15);
        let alphabet: Vec<char> = filler.choose_multiple(&mut rng, 4).copied().collect();
        let mut all = Vec::new();
        for &a in &alphabet {
            for &b in &alphabet {
                for &c in &alphabet {
                    if a != b && b != c && a != c {
                        all.push([a, b, c]);
                    }
                }
            }
        }
        all.shuffle(&mut rng);
        all.truncate(config.classes + 1);
        Ok(Self { filler, local: all })
    }
}

fn order_positions(len: usize, rng: &mut ChaCha8Rng) -> [usize; 3] {
    let third = len / 3;
    let mut pos = [0; 3];
    for (k, p) in pos.iter_mut().enumerate() {
        *p = k * third + rng.gen_range(third / 4..third - third / 4);
    }
    pos
}

/// Generates `classes × per_class` documents, class by class.
pub fn generate(config: &SynthConfig) -> Result<Vec<Record>, CorpusError> {
    if config.min_len < 24 || config.max_len < config.min_len {
        return Err(CorpusError::Invalid(format!(
            "synthetic length range must satisfy 24 ≤ min ≤ max, got {}..{}",
            config.min_len, config.max_len
        )));
    }
    if config.local_only < 0.0 || config.order_only < 0.0 || config.local_only + config.order_only > 1.0 {
        return Err(CorpusError::Invalid("evidence shares must be non-negative and sum to ≤ 1".into()));
    }
    let cues = CueTable::new(config)?;
    let neutral = config.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.classes * config.per_class);
    for class in 0..config.classes {
        for _ in 0..config.per_class {
            let u: f64 = rng.gen();
            let evidence = if u < config.local_only {
                Evidence::Local
            } else if u < config.local_only + config.order_only {
                Evidence::Order
            } else {
                Evidence::Both
            };
            let (local, order) = match evidence {
                Evidence::Local => (class, neutral),
                Evidence::Order => (neutral, class),
                Evidence::Both => (class, class),
            };
            let len = rng.gen_range(config.min_len..=config.max_len);
            let mut text: Vec<char> = (0..len).map(|_| *cues.filler.choose(&mut rng).expect("non-empty")).collect();
            let marks = order_positions(len, &mut rng);
            for (slot, &m) in marks.iter().zip(&ORDERS[order]) {
                text[*slot] = MARKERS[m];
            }
            let start = loop {
                let s = rng.gen_range(0..len - 2);
                if marks.iter().all(|&m| m < s || m > s + 2) {
                    break s;
                }
            };
            text[start..start + 3].copy_from_slice(&cues.local[local]);
            out.push(Record::new(CATEGORY_NAMES[class], text.into_iter().collect::<String>()));
        }
    }
    Ok(out)
}
