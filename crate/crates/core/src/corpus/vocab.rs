use std::collections::HashMap;
use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use super::Record;
use crate::error::CorpusError;
use crate::layers::PAD_INDEX;

pub const PAD_TOKEN: &str = "<PAD>";
pub const UNK_TOKEN: &str = "<UNK>";
pub const UNK_INDEX: usize = 1;

/// Character vocabulary. Index 0 is PAD, index 1 is UNK, and characters
/// follow in descending frequency (ties by ascending code point).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

/// Counts characters over every record and keeps those seen at least
/// `min_freq` times.
pub fn build_vocab(records: &[Record], min_freq: usize) -> Result<Vocab, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::Empty("no records to build a vocabulary from"));
    }
    let mut counts: HashMap<char, usize> = HashMap::new();
    for r in records {
        for c in r.text.chars() {
            *counts.entry(c).or_default() += 1;
        }
    }
    let mut kept: Vec<(char, usize)> = counts.into_iter().filter(|&(_, n)| n >= min_freq.max(1)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(Vocab::from_chars(kept.into_iter().map(|(c, _)| c).collect()))
}

impl Vocab {
    /// Builds a vocabulary whose non-reserved entries are `chars`, in order.
    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        Self { chars, index }
    }

    /// Number of entries including PAD and UNK.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK_INDEX)
    }

    /// Token text for an index (`<PAD>`, `<UNK>` or the character).
    pub fn token(&self, id: usize) -> Option<String> {
        match id {
            PAD_INDEX => Some(PAD_TOKEN.to_string()),
            UNK_INDEX => Some(UNK_TOKEN.to_string()),
            _ => self.chars.get(id - 2).map(|c| c.to_string()),
        }
    }

    /// Ids of the first `cap` characters of `text`.
    pub fn encode(&self, text: &str, cap: usize) -> Vec<usize> {
        text.chars().take(cap).map(|c| self.id(c)).collect()
    }

    /// Inverse of [`Vocab::encode`] for in-vocabulary text. PAD is dropped
    /// and UNK becomes U+FFFD.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != PAD_INDEX)
            .map(|&i| match i {
                UNK_INDEX => char::REPLACEMENT_CHARACTER,
                _ => self.chars.get(i - 2).copied().unwrap_or(char::REPLACEMENT_CHARACTER),
            })
            .collect()
    }

    /// Vocabulary file contents: one token per line, line number = index.
    pub fn to_file_string(&self) -> String {
        let mut s = String::with_capacity(self.chars.len() * 4 + 16);
        s.push_str(PAD_TOKEN);
        s.push('\n');
        s.push_str(UNK_TOKEN);
        s.push('\n');
        for c in &self.chars {
            s.push(*c);
            s.push('\n');
        }
        s
    }

    /// 64-bit FNV-1a over the vocabulary file contents.
    pub fn digest(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(self.to_file_string().as_bytes());
        h.finish()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |line: usize, reason: &str| CorpusError::BadVocabFile {
            path: path.to_path_buf(),
            line,
            reason: reason.to_string(),
        };
        let body = text.strip_suffix('\n').unwrap_or(&text);
        let mut lines = body.split('\n');
        if lines.next() != Some(PAD_TOKEN) {
            return Err(bad(1, "first line must be <PAD>"));
        }
        if lines.next() != Some(UNK_TOKEN) {
            return Err(bad(2, "second line must be <UNK>"));
        }
        let mut chars = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in lines.enumerate() {
            let mut it = line.chars();
            let (Some(c), None) = (it.next(), it.next()) else {
                return Err(bad(i + 3, "expected exactly one character"));
            };
            if seen.insert(c, i).is_some() {
                return Err(bad(i + 3, "duplicate character"));
            }
            chars.push(c);
        }
        Ok(Self::from_chars(chars))
    }
}
