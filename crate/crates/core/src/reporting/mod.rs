//! Aggregation of experiment records into tables, rank statistics and figures.

pub mod figures;
pub mod ranks;
pub mod tsne;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io;
use std::path::PathBuf;

use ndarray::Array2;
use thiserror::Error;

use crate::results::ExperimentResult;

pub use figures::{emit_figure, Figure, ScatterPlot, TsnePanel};
pub use ranks::{fractional_ranks, rank_report, RankReport};
pub use tsne::{tsne_embed, TsneConfig};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records for model `{0}`")]
    NoRecords(String),
    #[error("incomplete coverage: {}", format_gaps(.0))]
    Coverage(Vec<(String, String, String)>),
    #[error("rank analysis needs at least 3 datasets, got {0}")]
    TooFewDatasets(usize),
    #[error("rank analysis needs at least 2 methods, got {0}")]
    TooFewMethods(usize),
    #[error("t-SNE input is degenerate: {0}")]
    Degenerate(String),
    #[error("failed to write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn format_gaps(gaps: &[(String, String, String)]) -> String {
    gaps.iter()
        .map(|(m, d, me)| format!("{m}/{d}/{me}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;

/// Sort key placing the four standard methods first, in table order.
pub fn method_order(label: &str) -> (usize, String) {
    let pos = ["baseline", "ss", "ls", "cp"]
        .iter()
        .position(|m| *m == label)
        .unwrap_or(4);
    (pos, label.to_owned())
}

/// Sort key for model rows, following the usual presentation order.
pub fn model_order(name: &str) -> (usize, String) {
    let pos = [
        "resnet18",
        "lstm_fcn",
        "inceptiontime",
        "inceptiontime-3",
        "inceptiontime-2",
        "inceptiontime-1",
    ]
    .iter()
    .position(|m| *m == name)
    .unwrap_or(6);
    (pos, name.to_owned())
}

/// Best accuracy per (dataset, method) for one model, averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    pub model: String,
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    /// `datasets x methods`.
    pub values: Array2<f64>,
}

impl AccuracyMatrix {
    pub fn column(&self, method: &str) -> Option<Vec<f64>> {
        let j = self.methods.iter().position(|m| m == method)?;
        Some(self.values.column(j).to_vec())
    }
}

/// Builds the accuracy matrix of `model`. Every method must cover every dataset that
/// appears for the model.
pub fn accuracy_matrix(records: &[ExperimentResult], model: &str) -> Result<AccuracyMatrix> {
    let mut cells: BTreeMap<(String, String), Vec<(u64, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.model == model) {
        cells
            .entry((r.dataset.clone(), r.method.clone()))
            .or_default()
            .push((r.seed, r.best_accuracy));
    }
    if cells.is_empty() {
        return Err(ReportError::NoRecords(model.to_owned()));
    }
    let datasets: Vec<String> = cells
        .keys()
        .map(|(d, _)| d.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut methods: Vec<String> = cells
        .keys()
        .map(|(_, m)| m.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    methods.sort_by_key(|m| method_order(m));

    let mut gaps = Vec::new();
    let mut values = Array2::zeros((datasets.len(), methods.len()));
    for (i, d) in datasets.iter().enumerate() {
        for (j, m) in methods.iter().enumerate() {
            match cells.get_mut(&(d.clone(), m.clone())) {
                Some(runs) => {
                    runs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
                    values[(i, j)] = runs.iter().map(|r| r.1).sum::<f64>() / runs.len() as f64;
                }
                None => gaps.push((model.to_owned(), d.clone(), m.clone())),
            }
        }
    }
    if !gaps.is_empty() {
        return Err(ReportError::Coverage(gaps));
    }
    Ok(AccuracyMatrix {
        model: model.to_owned(),
        datasets,
        methods,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableCell {
    pub mean_accuracy: f64,
    pub dataset_count: usize,
}

/// Mean best accuracy per (model, method) over datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub models: Vec<String>,
    pub methods: Vec<String>,
    pub cells: BTreeMap<(String, String), TableCell>,
}

impl ResultsTable {
    pub fn get(&self, model: &str, method: &str) -> Option<TableCell> {
        self.cells.get(&(model.to_owned(), method.to_owned())).copied()
    }

    /// CSV with one row per model and four-decimal cells; absent cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for m in &self.methods {
            out.push(',');
            out.push_str(m);
        }
        out.push_str(",datasets\n");
        for model in &self.models {
            out.push_str(model);
            let mut count = 0;
            for method in &self.methods {
                out.push(',');
                if let Some(c) = self.get(model, method) {
                    let _ = write!(out, "{:.4}", c.mean_accuracy);
                    count = c.dataset_count;
                }
            }
            let _ = writeln!(out, ",{count}");
        }
        out
    }
}

/// Aggregates `records` into a table, optionally restricted to `models`.
pub fn aggregate_table(records: &[ExperimentResult], models: Option<&[String]>) -> Result<ResultsTable> {
    let mut names: Vec<String> = match models {
        Some(m) => m.to_vec(),
        None => records
            .iter()
            .map(|r| r.model.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    names.sort_by_key(|m| model_order(m));
    let mut all_methods = BTreeSet::new();
    let mut cells = BTreeMap::new();
    let mut gaps = Vec::new();
    for model in &names {
        let matrix = match accuracy_matrix(records, model) {
            Ok(m) => m,
            Err(ReportError::Coverage(g)) => {
                gaps.extend(g);
                continue;
            }
            Err(e) => return Err(e),
        };
        let n = matrix.datasets.len();
        for (j, method) in matrix.methods.iter().enumerate() {
            all_methods.insert(method.clone());
            let mean = matrix.values.column(j).sum() / n as f64;
            cells.insert(
                (model.clone(), method.clone()),
                TableCell {
                    mean_accuracy: mean,
                    dataset_count: n,
                },
            );
        }
    }
    if !gaps.is_empty() {
        return Err(ReportError::Coverage(gaps));
    }
    let mut methods: Vec<String> = all_methods.into_iter().collect();
    methods.sort_by_key(|m| method_order(m));
    Ok(ResultsTable {
        models: names,
        methods,
        cells,
    })
}

/// Rank analysis of the methods run on `model`.
pub fn critical_difference(
    records: &[ExperimentResult],
    model: &str,
    alpha: f64,
) -> Result<RankReport> {
    let matrix = accuracy_matrix(records, model)?;
    rank_report(&matrix, alpha)
}

/// `model,method,average_rank,friedman_p,clique` rows for every report.
pub fn ranks_csv(reports: &[(String, RankReport)]) -> String {
    let mut out = String::from("model,method,average_rank,friedman_p,cliques\n");
    for (model, report) in reports {
        for (method, rank) in report.ranking() {
            let ids: Vec<String> = report
                .cliques
                .iter()
                .enumerate()
                .filter(|(_, c)| c.iter().any(|m| m == method))
                .map(|(i, _)| i.to_string())
                .collect();
            let _ = writeln!(
                out,
                "{model},{method},{rank:.4},{:.6},{}",
                report.friedman_p,
                ids.join(";")
            );
        }
    }
    out
}
