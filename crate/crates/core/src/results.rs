//! Experiment records and their JSON-lines store.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    #[default]
    Ok,
    Diverged,
}

/// Outcome of one (dataset, model, method, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub dataset: String,
    pub model: String,
    pub depth: Option<usize>,
    /// Method label as written in the plan; distinguishes encoder variants of `ss`.
    pub method: String,
    pub seed: u64,
    pub gamma: f64,
    pub beta: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub best_accuracy: f64,
    /// `(epoch, test accuracy)` at every evaluation.
    pub eval_points: Vec<(usize, f64)>,
    pub wall_time: f64,
    #[serde(default)]
    pub encoder: Option<String>,
    #[serde(default)]
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Identity of a cell within an experiment matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub seed: u64,
}

impl ExperimentResult {
    pub fn key(&self) -> CellKey {
        CellKey {
            dataset: self.dataset.clone(),
            model: self.model.clone(),
            method: self.method.clone(),
            seed: self.seed,
        }
    }
}

/// Append-only JSON-lines file. Each record is written with a single `write_all`, so
/// concurrent writers never interleave within a line.
#[derive(Debug)]
pub struct ResultsStore {
    path: PathBuf,
    lock: Mutex<()>,
}

/// Records read back from a store plus the number of unreadable lines.
#[derive(Debug, Default)]
pub struct LoadedResults {
    pub records: Vec<ExperimentResult>,
    pub skipped_lines: Vec<usize>,
}

impl ResultsStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &ExperimentResult) -> io::Result<()> {
        let mut line = serde_json::to_string(record).map_err(io::Error::other)?;
        line.push('\n');
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        file.write_all(line.as_bytes())?;
        file.flush()
    }

    /// Reads every complete record; a missing file reads as empty.
    pub fn load(&self) -> io::Result<LoadedResults> {
        match fs::read_to_string(&self.path) {
            Ok(text) => Ok(parse_records(&text)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(LoadedResults::default()),
            Err(e) => Err(e),
        }
    }
}

/// Parses JSON lines, skipping (and reporting) lines that do not decode, such as a
/// partially written final line.
pub fn parse_records(text: &str) -> LoadedResults {
    let mut out = LoadedResults::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ExperimentResult>(line) {
            Ok(r) => out.records.push(r),
            Err(_) => out.skipped_lines.push(idx + 1),
        }
    }
    out
}
