use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One optimization step, one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub step: u64,
    pub lr: f64,
    pub action_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_loss: Option<f64>,
    pub total_loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
    pub global_batch: usize,
}

pub trait EventSink {
    fn record(&mut self, event: &StepEvent) -> Result<()>;
}

impl EventSink for Vec<StepEvent> {
    fn record(&mut self, event: &StepEvent) -> Result<()> {
        self.push(event.clone());
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn record(&mut self, _event: &StepEvent) -> Result<()> {
        Ok(())
    }
}

/// Append-only JSON-lines log.
pub struct JsonlSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlSink {
    pub fn append(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(JsonlSink {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }
}

impl EventSink for JsonlSink {
    fn record(&mut self, event: &StepEvent) -> Result<()> {
        let line = serde_json::to_string(event).expect("event serializes");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_events(path: &Path) -> Result<Vec<StepEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path.display().to_string(), format!("line {}: {e}", i + 1)))
        })
        .collect()
}
