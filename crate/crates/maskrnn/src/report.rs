//! JSON documents written next to command outputs.

use std::fs;
use std::path::Path;

use maskrnn_core::metrics::{MetricsConfig, MetricsReport};
use maskrnn_core::vision::BBox;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub metrics: MetricsConfig,
    pub report: MetricsReport,
    pub table: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameBoxes {
    pub frame: String,
    /// Restriction box per object; `null` where none was applied.
    pub boxes: Vec<Option<BBox>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxesFile {
    pub schema: u32,
    pub sequence: String,
    /// Annotation index of each object.
    pub label_ids: Vec<u8>,
    pub frames: Vec<FrameBoxes>,
}

/// Everything needed to rerun a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Wall-clock seconds per unit of work (epoch, object or frame).
    pub timing: Vec<(String, f64)>,
    pub total_seconds: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}
