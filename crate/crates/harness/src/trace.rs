//! Per-step regret traces and their CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    /// FNV-1a hash of the raw context, hex encoded.
    pub context_hash: String,
    pub arm: usize,
    /// Arm the assignment is judged against (noiseless optimum or best in class).
    pub target_arm: usize,
    pub reward: f64,
    pub optimal_reward: f64,
    pub regret: f64,
    pub cumulative_regret: f64,
}

pub fn context_hash(x: &[f64]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in x {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

pub fn trace_file_name(policy: &str, seed: u64) -> String {
    format!("trace_{policy}_{seed}.csv")
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        w.write_record([
            "t",
            "context_hash",
            "arm",
            "target_arm",
            "reward",
            "optimal_reward",
            "regret",
            "cumulative_regret",
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Runtime(format!("{}: {e}", path.display()))
}

/// Splits `trace_<policy>_<seed>.csv` into its policy and seed.
pub fn parse_trace_name(file_name: &str) -> Option<(String, u64)> {
    let stem = file_name.strip_prefix("trace_")?.strip_suffix(".csv")?;
    let (policy, seed) = stem.rsplit_once('_')?;
    if policy.is_empty() {
        return None;
    }
    Some((policy.to_string(), seed.parse().ok()?))
}
