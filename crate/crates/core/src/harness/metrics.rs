use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::LossBreakdown;
use crate::optim::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Main,
    Finetune,
}

/// One line of the metrics stream. `(epoch, step)` never decreases;
/// `step` counts training windows across both phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub kind: RecordKind,
    pub phase: Phase,
    pub epoch: usize,
    pub step: u64,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossBreakdown>,
    /// Gradient norm before clipping; absent when the step was skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpc: Option<f64>,
    /// Wall-clock seconds for forward, backward and update.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_seconds: Option<f64>,
}

impl MetricsRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }

    /// The record without its wall-clock field, for reproducibility checks.
    pub fn without_timing(&self) -> MetricsRecord {
        MetricsRecord {
            step_seconds: None,
            ..self.clone()
        }
    }
}

/// Receives a run's outputs as they are produced, so an aborted run still
/// leaves its last good checkpoint behind.
pub trait RunSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<()>;
    fn best(&mut self, checkpoint: &Checkpoint) -> Result<()>;
}

/// Keeps everything in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<MetricsRecord>,
    pub best: Option<Checkpoint>,
}

impl RunSink for MemorySink {
    fn record(&mut self, record: &MetricsRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }

    fn best(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        self.best = Some(checkpoint.clone());
        Ok(())
    }
}

/// Writes `metrics.jsonl` and `best.ckpt` under a run directory. The first
/// metrics line is `{"config": "<config text>"}`.
pub struct DirSink {
    metrics: BufWriter<File>,
    metrics_path: PathBuf,
    checkpoint_path: PathBuf,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

impl DirSink {
    pub fn create(dir: &Path, config_text: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let metrics_path = dir.join(METRICS_FILE);
        let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let mut sink = DirSink {
            metrics: BufWriter::new(file),
            metrics_path,
            checkpoint_path: dir.join(BEST_CHECKPOINT),
        };
        let header = serde_json::json!({ "config": config_text });
        sink.line(&header.to_string())?;
        Ok(sink)
    }

    fn line(&mut self, line: &str) -> Result<()> {
        writeln!(self.metrics, "{line}")
            .and_then(|_| self.metrics.flush())
            .map_err(|e| Error::io(&self.metrics_path, e))
    }

    pub fn checkpoint_path(&self) -> &Path {
        &self.checkpoint_path
    }
}

impl RunSink for DirSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<()> {
        self.line(&record.to_json())
    }

    fn best(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        checkpoint.save(&self.checkpoint_path)
    }
}

/// Reads a metrics file back, skipping the config header.
pub fn read_metrics(path: &Path) -> Result<(String, Vec<MetricsRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().ok_or(Error::EmptyInput)?)?;
    let config = header["config"]
        .as_str()
        .ok_or_else(|| Error::Config("metrics file lacks its config header".into()))?
        .to_string();
    let records = lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
    Ok((config, records))
}
