//! Dataset ingestion, whole-benchmark orchestration, report emission and
//! overlay rendering.

mod config;
mod manifest;
mod overlay;
mod report;
mod run;
mod synth;

pub use config::{ConfigOverrides, RunConfig};
pub use manifest::{ingest, ingest_with, Manifest, ManifestRow, DEFAULT_POSITIVE};
pub use overlay::{overlay_rgb, render_overlay, EXP_TINT, HPE_TINT, OVERLAP_TINT};
pub use report::{ReportRow, RowStatus, RunReport, Stat, ToolSummary};
pub use run::{run, run_with_oracle, write_outputs, RunOutcome, Timing};
pub use synth::{synth_dataset, SynthParams};

use std::io;

use thiserror::Error;

use crate::imaging::io::IoError;
use crate::imaging::ImagingError;
use crate::oracle::OracleError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("row {row}: missing file {path}")]
    MissingFile { row: usize, path: String },
    #[error("row {row}: bad mask: {reason}")]
    BadMask { row: usize, reason: String },
    #[error("{}bad CSV: {reason}", row.map(|r| format!("row {r}: ")).unwrap_or_default())]
    BadCsv { row: Option<usize>, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {source}")]
    Write { path: String, source: io::Error },
}

impl BenchError {
    /// Process exit status: 1 for input and config problems, 2 for oracle
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Oracle(_) => 2,
            _ => 1,
        }
    }
}
