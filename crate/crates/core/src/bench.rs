//! Prediction throughput benchmark.
//!
//! The timing window opens when the checkpoint starts loading and closes
//! after the last prediction. Reading and encoding the data happens before
//! the window and is not counted.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::load_checkpoint;
use crate::corpus::EncodedRecord;
use crate::error::TrainError;
use crate::train::predict_records;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: usize,
    pub batch_size: usize,
    /// Checkpoint read and model construction.
    pub load_seconds: f64,
    /// All forward passes.
    pub predict_seconds: f64,
    /// `load_seconds + predict_seconds`.
    pub total_seconds: f64,
    /// `records / total_seconds`.
    pub records_per_second: f64,
}

impl BenchReport {
    pub fn render(&self) -> String {
        format!(
            "records          {}\nbatch size       {}\nload (s)         {:.3}\npredict (s)      {:.3}\ntotal (s)        {:.3}\nrecords/second   {:.1}\n",
            self.records,
            self.batch_size,
            self.load_seconds,
            self.predict_seconds,
            self.total_seconds,
            self.records_per_second
        )
    }
}

/// Loads the checkpoint at `path` and labels every record of `data`,
/// single-threaded.
pub fn bench_predict(
    path: impl AsRef<Path>,
    data: &[EncodedRecord],
    batch_size: usize,
    expected_vocab_digest: Option<u64>,
) -> Result<BenchReport, TrainError> {
    if batch_size == 0 {
        return Err(TrainError::Config("batch size must be ≥ 1".into()));
    }
    let start = Instant::now();
    let ck = load_checkpoint(path, expected_vocab_digest)?;
    let loaded = Instant::now();
    if !data.is_empty() {
        predict_records(&ck.classifier, data, batch_size, 1)?;
    }
    let end = Instant::now();
    let load_seconds = (loaded - start).as_secs_f64();
    let predict_seconds = (end - loaded).as_secs_f64();
    let total_seconds = load_seconds + predict_seconds;
    Ok(BenchReport {
        records: data.len(),
        batch_size,
        load_seconds,
        predict_seconds,
        total_seconds,
        records_per_second: if total_seconds > 0.0 {
            data.len() as f64 / total_seconds
        } else {
            0.0
        },
    })
}
