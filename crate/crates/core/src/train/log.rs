//! Line-delimited training log.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScanError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Segmentor,
    Critic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    /// Start of an epoch with the sample order used.
    Epoch { epoch: usize, order: Vec<usize> },
    /// One optimizer step. Loss fields are minibatch sums.
    Step {
        step: u64,
        epoch: usize,
        phase: Phase,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        pixel: Option<f64>,
        /// Generator term `J_d(D(S(x)), 1)`.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        adversarial: Option<f64>,
        /// Critic objective.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        critic: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        real_score: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        fake_score: Option<f64>,
        batch: usize,
        wall_ms: f64,
    },
    /// Run halted; the message names the offending quantity.
    Diagnostic { step: u64, epoch: usize, message: String },
}

impl LogRecord {
    pub fn step(&self) -> Option<u64> {
        match self {
            LogRecord::Step { step, .. } => Some(*step),
            _ => None,
        }
    }
}

/// In-memory record list, mirrored to a file when attached.
#[derive(Debug, Default)]
pub struct TrainLog {
    records: Vec<LogRecord>,
    sink: Option<(PathBuf, BufWriter<File>)>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts a fresh log file, replacing any previous one.
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| ScanError::io(&*path, e))?;
        Ok(Self { records: Vec::new(), sink: Some((path.to_path_buf(), BufWriter::new(f))) })
    }

    /// Reads an existing log, keeps records up to `last_step` and reopens it
    /// for appending. Records past the step belong to work that is redone.
    pub fn resume(path: &Path, last_step: u64) -> Result<Self> {
        let mut records = Self::read(path)?;
        let keep = records
            .iter()
            .rposition(|r| r.step().is_some_and(|s| s <= last_step))
            .map_or(0, |i| i + 1);
        records.truncate(keep);
        let mut log = Self::create(path)?;
        for r in records {
            log.push(r)?;
        }
        log.flush()?;
        Ok(log)
    }

    pub fn read(path: &Path) -> Result<Vec<LogRecord>> {
        let f = File::open(path).map_err(|e| ScanError::io(&*path, e))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| ScanError::io(&*path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|e| ScanError::format(path, format!("line {}: {e}", i + 1)))?;
            out.push(rec);
        }
        Ok(out)
    }

    pub fn push(&mut self, record: LogRecord) -> Result<()> {
        if let Some((path, w)) = &mut self.sink {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n").map_err(|e| ScanError::io(&*path, e))?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some((path, w)) = &mut self.sink {
            w.flush().map_err(|e| ScanError::io(&*path, e))?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn last_step(&self) -> u64 {
        self.records.iter().rev().find_map(LogRecord::step).unwrap_or(0)
    }

    /// Steps of one phase, in order.
    pub fn steps(&self, phase: Phase) -> impl Iterator<Item = &LogRecord> {
        self.records
            .iter()
            .filter(move |r| matches!(r, LogRecord::Step { phase: p, .. } if *p == phase))
    }

    /// Per-sample mean pixel loss over the segmentor and pretrain steps of an epoch.
    pub fn epoch_mean_pixel(&self, epoch: usize) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for r in &self.records {
            if let LogRecord::Step { epoch: e, pixel: Some(p), batch, .. } = r {
                if *e == epoch {
                    sum += p;
                    n += batch;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

impl Drop for TrainLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
