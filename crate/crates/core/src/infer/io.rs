//! Result and metrics files.

use super::metrics::MetricsReport;
use super::postprocess::DetectionResult;
use crate::error::{Error, Result};
use serde::Serialize;
use std::path::Path;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const METRICS_KV_FILE: &str = "metrics.kv";
pub const METRICS_TABLE_FILE: &str = "metrics.txt";

#[derive(Serialize)]
struct ResultRecord<'a> {
    pair_id: u64,
    object_id: u64,
    predicted_class: usize,
    /// Bit `w` set means interaction `w` predicted present.
    interaction_mask: u64,
    scores: &'a [(usize, f64)],
}

/// Line-delimited per-pair records: pair id, predicted class, interaction
/// bitmask and triplet scores.
pub fn write_results(dir: &Path, result: &DetectionResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = String::new();
    for p in &result.pairs {
        let mut mask = 0u64;
        for &w in &p.interactions {
            if w < 64 {
                mask |= 1 << w;
            }
        }
        let record = ResultRecord {
            pair_id: p.pair_id,
            object_id: p.object_id,
            predicted_class: p.predicted_class,
            interaction_mask: mask,
            scores: &p.scores,
        };
        out.push_str(&serde_json::to_string(&record).map_err(|e| Error::Format {
            path: RESULTS_FILE.into(),
            reason: e.to_string(),
        })?);
        out.push('\n');
    }
    std::fs::write(dir.join(RESULTS_FILE), out)?;
    Ok(())
}

/// Plain-text table plus machine-readable key-value file.
pub fn write_metrics_files(dir: &Path, report: &MetricsReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(METRICS_KV_FILE), report.to_kv())?;
    std::fs::write(dir.join(METRICS_TABLE_FILE), report.to_table())?;
    Ok(())
}
