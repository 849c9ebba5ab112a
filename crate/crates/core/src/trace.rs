//! Run traces: one JSONL record per logged iteration plus a terminal summary
//! record.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Snapshot of one logged iteration. Losses, stationarity points, and
/// feasibility gaps are full-batch values at the current parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub epoch: usize,
    pub recipe: String,
    pub order: String,
    /// Dynamic weights per level, keyed `level_1`, `level_2`, ...
    pub lambda: BTreeMap<String, Vec<f64>>,
    /// Weight of the self-supervised objective when it shares the simplex.
    pub lambda_u: Option<f64>,
    /// Current penalty values, keyed `level_2`, ..., `unsup`.
    pub eta: BTreeMap<String, f64>,
    pub losses: BTreeMap<String, f64>,
    pub stationarity: f64,
    pub feasibility_gap: Option<f64>,
    pub conflict_layers: Vec<String>,
    pub restricted: bool,
    /// Two-stage runs mark their phase; other recipes omit the field.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
}

/// Terminal record carrying everything a summary needs that is not in the
/// iteration records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    #[serde(rename = "final")]
    pub is_final: bool,
    pub params_hash: String,
    pub wallclock_ms: f64,
    pub pareto_distance: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub final_record: Option<FinalRecord>,
}

impl RunTrace {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut w, record)?;
            w.write_all(b"\n")?;
        }
        if let Some(final_record) = &self.final_record {
            serde_json::to_writer(&mut w, final_record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<RunTrace> {
        let mut records = Vec::new();
        let mut final_record = None;
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line)?;
            if value.get("final").and_then(|v| v.as_bool()).unwrap_or(false) {
                final_record = Some(serde_json::from_value(value)?);
            } else if value.get("aborted").is_some() {
                // Diagnostic record of a failed run; keep parsing tolerant.
                continue;
            } else {
                records.push(serde_json::from_value(value)?);
            }
        }
        Ok(RunTrace { records, final_record })
    }

    pub fn last_record(&self) -> Result<&TraceRecord> {
        self.records
            .last()
            .ok_or_else(|| Error::MissingData("trace has no records".into()))
    }
}
