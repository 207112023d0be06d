//! Benchmark reports and their CSV/JSON files.
//!
//! Column order follows field order; rows are written in the order given.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CraftError, Result};

/// Where the time of one process went. All durations share `unit`:
/// delivered messages in simulation, microseconds with real processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub scenario: String,
    /// Checkpoint configuration, e.g. `sync`, `async`, `node`.
    pub mode: String,
    pub unit: String,
    pub ranks: usize,
    pub iterations: u64,
    pub cp_freq: i64,
    pub total: u64,
    /// `total` minus every overhead below.
    pub baseline: u64,
    /// Writing checkpoints, including waits for background writes.
    pub oh_cp: u64,
    /// Reading checkpoints after a restart or recovery.
    pub oh_res: u64,
    /// From failure detection to re-entering the computation.
    pub oh_rec: u64,
    /// Recomputing iterations lost since the last checkpoint.
    pub oh_redo: u64,
    pub checkpoints: u64,
    /// `oh_cp / checkpoints`, 0 without checkpoints.
    pub cp_avg: f64,
    pub recoveries: u64,
    pub min_eigenvalue: f64,
}

/// One phase of one recovery as seen by the process that decided it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub scenario: String,
    pub policy: String,
    pub spawn: String,
    pub unit: String,
    pub epoch: u64,
    pub failed_ranks: usize,
    pub downgraded: bool,
    pub phase: String,
    pub duration: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Pick the format from a file extension; CSV unless it is `.json`.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| CraftError::Storage(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| CraftError::Storage(format!("csv: {e}")))
}

pub fn read_csv<T: DeserializeOwned>(input: impl std::io::Read) -> Result<Vec<T>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CraftError::Storage(format!("csv: {e}")))
}

pub fn write_json<T: Serialize>(rows: &[T], mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows).map_err(|e| CraftError::Storage(format!("json: {e}")))?;
    out.write_all(b"\n").map_err(|e| CraftError::Storage(format!("json: {e}")))
}

pub fn read_json<T: DeserializeOwned>(input: impl std::io::Read) -> Result<Vec<T>> {
    serde_json::from_reader(input).map_err(|e| CraftError::Storage(format!("json: {e}")))
}

/// Write `rows` to `path`.
pub fn emit_report<T: Serialize>(rows: &[T], format: Format, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CraftError::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(rows, &mut out)?,
        Format::Json => write_json(rows, &mut out)?,
    }
    out.flush().map_err(|e| CraftError::io(path, e))
}
