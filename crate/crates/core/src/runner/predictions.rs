use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RunError, Setting};
use crate::gateway::TokenUsage;
use crate::selector::ShotPlan;
use crate::verdict::{InspectionVerdict, MetricLabel};

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub category: String,
    pub setting: Setting,
    pub shot_plan: ShotPlan,
    pub model: String,
    pub example_ids: Vec<String>,
    /// Selection scores aligned with `example_ids` (empty for random).
    #[serde(default)]
    pub example_scores: Vec<f64>,
    pub raw_text: Option<String>,
    /// Parsed and normalized verdict; absent when inference failed.
    pub verdict: Option<InspectionVerdict>,
    /// Verdict mapped under the run's error policy.
    pub binary_prediction: Option<MetricLabel>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    /// Why no verdict was produced; such rows are left out of the metrics.
    pub failure: Option<String>,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub width: u32,
    pub height: u32,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, RunError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RunError::Predictions {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub(crate) fn append_predictions(writer: &mut impl Write, records: &[PredictionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), RunError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    append_predictions(&mut BufWriter::new(file), records).map_err(io_err(path))
}
