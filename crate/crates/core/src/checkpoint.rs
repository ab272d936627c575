//! Checkpoint files.
//!
//! Layout: the magic bytes `CTCM`, the format version (u32 LE), the header
//! length in bytes (u64 LE), a UTF-8 JSON header, then one little-endian
//! f32 segment per parameter tensor. Every segment starts on an 8-byte
//! boundary; the header records its absolute offset, shape and a 64-bit
//! FNV-1a checksum of its bytes.

use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelTable;
use crate::error::TrainError;
use crate::models::{Architecture, ArchitectureDoc, Classifier, Ensemble, Model, NetworkConfig, SCHEMA_VERSION};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CTCM";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    /// Member index within an ensemble (0 for a single network).
    pub member: usize,
    pub name: String,
    pub shape: Vec<usize>,
    /// Absolute byte offset of the segment.
    pub offset: u64,
    /// FNV-1a 64 of the segment bytes, as 16 hex digits.
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub architecture: ArchitectureDoc,
    /// FNV-1a 64 of the vocabulary file, as 16 hex digits.
    pub vocab_digest: String,
    pub labels: LabelTable,
    pub tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub classifier: Classifier<f32>,
    pub labels: LabelTable,
    pub vocab_digest: u64,
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn hex(v: u64) -> String {
    format!("{v:016x}")
}

fn align8(n: usize) -> usize {
    n.div_ceil(8) * 8
}

fn err(path: &Path, reason: impl Into<String>) -> TrainError {
    TrainError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Serializes a classifier, its label table and the digest of the
/// vocabulary it was trained with.
pub fn to_bytes(classifier: &Classifier<f32>, labels: &LabelTable, vocab_digest: u64) -> Vec<u8> {
    let models = classifier.models();
    // Offsets depend on the header length, which depends on the offsets'
    // digit counts; iterate until the layout is stable.
    let mut header_len = 0;
    loop {
        let mut offset = align8(PREAMBLE + header_len);
        let mut entries = Vec::new();
        let mut segments = Vec::new();
        for (member, m) in models.iter().enumerate() {
            for (name, t) in m.params().iter() {
                let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                entries.push(TensorEntry {
                    member,
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset: offset as u64,
                    checksum: hex(fnv64(&bytes)),
                });
                offset = align8(offset + bytes.len());
                segments.push(bytes);
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            architecture: ArchitectureDoc::new(classifier.architecture()),
            vocab_digest: hex(vocab_digest),
            labels: labels.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        if json.len() != header_len {
            header_len = json.len();
            continue;
        }
        let mut out = Vec::with_capacity(offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (entry, bytes) in header.tensors.iter().zip(&segments) {
            out.resize(entry.offset as usize, 0);
            out.extend_from_slice(bytes);
        }
        out.resize(align8(out.len()), 0);
        return out;
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    classifier: &Classifier<f32>,
    labels: &LabelTable,
    vocab_digest: u64,
) -> Result<(), TrainError> {
    let path = path.as_ref();
    fs::write(path, to_bytes(classifier, labels, vocab_digest)).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads only the header.
pub fn read_header(bytes: &[u8], path: &Path) -> Result<Header, TrainError> {
    if bytes.len() < PREAMBLE || &bytes[..4] != MAGIC {
        return Err(err(path, "not a checkpoint (bad magic bytes)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(err(
            path,
            format!("format version {version} is not supported (expected {FORMAT_VERSION})"),
        ));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(PREAMBLE..PREAMBLE.saturating_add(len))
        .ok_or_else(|| err(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| err(path, format!("bad header: {e}")))?;
    if header.format_version != version {
        return Err(err(path, "header and preamble disagree on the format version"));
    }
    if header.architecture.schema_version != SCHEMA_VERSION {
        return Err(err(
            path,
            format!(
                "architecture schema version {} is not supported (expected {SCHEMA_VERSION})",
                header.architecture.schema_version
            ),
        ));
    }
    Ok(header)
}

/// Parses a checkpoint image. `path` is only used in error messages.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint, TrainError> {
    let header = read_header(bytes, path)?;
    let vocab_digest =
        u64::from_str_radix(&header.vocab_digest, 16).map_err(|_| err(path, "bad vocabulary digest"))?;
    let networks: Vec<NetworkConfig> = match &header.architecture.architecture {
        Architecture::Network(n) => vec![n.clone()],
        Architecture::Ensemble { members, .. } => members.clone(),
    };
    let mut per_member: Vec<Vec<(String, Tensor<f32>)>> = vec![Vec::new(); networks.len()];
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let seg = start
            .checked_add(n * 4)
            .and_then(|end| bytes.get(start..end))
            .ok_or_else(|| err(path, format!("truncated payload in tensor `{}`", e.name)))?;
        if hex(fnv64(seg)) != e.checksum {
            return Err(err(path, format!("checksum mismatch in tensor `{}`", e.name)));
        }
        let values = seg
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(e.shape.clone(), values).map_err(|x| err(path, x.to_string()))?;
        per_member
            .get_mut(e.member)
            .ok_or_else(|| err(path, format!("tensor `{}` names member {}", e.name, e.member)))?
            .push((e.name.clone(), t));
    }
    let mut models = Vec::with_capacity(networks.len());
    for (net, named) in networks.iter().zip(per_member) {
        let mut m = Model::<f32>::build(net, 0).map_err(|e| err(path, e.to_string()))?;
        m.params_mut().load(named).map_err(|e| err(path, e.to_string()))?;
        models.push(m);
    }
    let classifier = match header.architecture.architecture {
        Architecture::Network(_) => Classifier::Single(models.pop().expect("one network")),
        Architecture::Ensemble { weights, mode, .. } => {
            Classifier::Ensemble(Ensemble::from_normalized(models, weights, mode).map_err(|e| err(path, e.to_string()))?)
        }
    };
    Ok(Checkpoint {
        classifier,
        labels: header.labels,
        vocab_digest,
    })
}

/// Loads a checkpoint. With `expected_vocab_digest`, a checkpoint trained
/// against a different vocabulary is rejected.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_vocab_digest: Option<u64>) -> Result<Checkpoint, TrainError> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let bytes = fs::read(&path).map_err(|source| TrainError::Io {
        path: path.clone(),
        source,
    })?;
    let ck = from_bytes(&bytes, &path)?;
    if let Some(want) = expected_vocab_digest {
        if want != ck.vocab_digest {
            return Err(err(
                &path,
                format!(
                    "vocabulary digest mismatch: checkpoint has {}, vocabulary file has {}",
                    hex(ck.vocab_digest),
                    hex(want)
                ),
            ));
        }
    }
    Ok(ck)
}
