//! Configuration lattice, execution with completion reuse, OFAT and
//! full-factorial search, and reports.
//!
//! A run directory holds:
//!
//! ```text
//! runs/<sweep-id>/
//!   configs.json       configurations in execution order
//!   completions/       one file per call signature
//!   scores.jsonl       one ResultRow per configuration
//!   report.{csv,md,json}
//! ```

mod config;
mod report;
mod runner;
mod search;

pub use config::{enumerate_space, CallSignature, DimValue, Dimension, InputType, RunConfig, SpaceSpec};
pub use report::{
    comparisons, delta_tables, emit_report, render_markdown_report, rows_from_jsonl, rows_to_jsonl, Comparison,
    DeltaRow, DeltaTable, ReportFormat, ResultRow,
};
pub use runner::{
    BackendFactory, CompletionSet, CompletionStore, Dataset, DocCompletions, FailedDoc, ModelServices, RunResult,
    Runner, RunnerOptions,
};
pub use search::{factorial_search, ofat_search, DimensionSweep, FactorialOutcome, OfatOutcome, OfatPolicy};

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Paths inside one sweep's run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(runs: impl AsRef<Path>, sweep_id: &str) -> Self {
        RunDir {
            root: runs.as_ref().join(sweep_id),
        }
    }

    pub fn configs(&self) -> PathBuf {
        self.root.join("configs.json")
    }

    pub fn completions(&self) -> PathBuf {
        self.root.join("completions")
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.jsonl")
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(self.completions()).map_err(|e| Error::io(self.completions(), e))
    }

    /// Write configs.json and scores.jsonl for `results`.
    pub fn write_results(&self, results: &[RunResult], manifest_hash: &str, seed: u64) -> Result<Vec<ResultRow>> {
        self.create()?;
        let configs: Vec<&RunConfig> = results.iter().map(|r| &r.config).collect();
        let body = serde_json::json!({
            "manifest_hash": manifest_hash,
            "seed": seed,
            "configs": configs,
        });
        let path = self.configs();
        fs::write(&path, serde_json::to_string_pretty(&body)? + "\n").map_err(|e| Error::io(&path, e))?;
        let rows: Vec<ResultRow> = results.iter().map(|r| ResultRow::from_result(r, manifest_hash, seed)).collect();
        let path = self.scores();
        fs::write(&path, rows_to_jsonl(&rows)).map_err(|e| Error::io(&path, e))?;
        Ok(rows)
    }
}
