//! Soft labels from average distances in representation space.
//!
//! For a training sample `m` of class `A`, let `r(m, n)` be the mean Euclidean distance
//! between its representation and every representation of a foreign class `n`. The
//! confidence of `n` is `gamma / r(m, n)`; the confidence of `A` is the sum of all
//! foreign confidences, and the soft label is the softmax of the confidence row.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, Axis};
use ndarray::parallel::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::representation::RepresentationMatrix;

pub const DEFAULT_GAMMA: f64 = 0.001;
pub const DEFAULT_DISTANCE_FLOOR: f64 = 1e-8;
/// Margin added to the own-class confidence when strict-argmax repair is enabled.
pub const STRICT_ARGMAX_MARGIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SoftLabelError {
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("label {label} at row {row} is outside 0..{num_classes}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("{labels} labels for {rows} representation rows")]
    Misaligned { rows: usize, labels: usize },
    #[error("non-finite representation entry in row {0}")]
    NonFinite(usize),
    #[error("gamma and distance_floor must be positive")]
    InvalidConfig,
    #[error("failed to access {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("soft-label cache line {line}: {message}")]
    Format { line: usize, message: String },
}

pub type Result<T, E = SoftLabelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftLabelConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_floor")]
    pub distance_floor: f64,
    /// Adds [`STRICT_ARGMAX_MARGIN`] to every own-class confidence so the true class is
    /// a strict argmax even for binary problems.
    #[serde(default)]
    pub strict_argmax: bool,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn default_floor() -> f64 {
    DEFAULT_DISTANCE_FLOOR
}

impl Default for SoftLabelConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            distance_floor: DEFAULT_DISTANCE_FLOOR,
            strict_argmax: false,
        }
    }
}

impl SoftLabelConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        Self {
            gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma > 0.0 && self.distance_floor > 0.0 {
            Ok(())
        } else {
            Err(SoftLabelError::InvalidConfig)
        }
    }
}

/// Entry `(m, n)` is the floored average distance from sample `m` to class `n`. The
/// own-class entry is never computed and reads as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistanceTable {
    distances: Array2<f64>,
    labels: Vec<usize>,
}

impl ClassDistanceTable {
    pub fn num_samples(&self) -> usize {
        self.distances.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.distances.ncols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, sample: usize, class: usize) -> Option<f64> {
        (self.labels[sample] != class).then(|| self.distances[(sample, class)])
    }

    /// Raw matrix; own-class cells hold NaN.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.distances
    }
}

fn check_labels(rows: usize, labels: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    if rows != labels.len() {
        return Err(SoftLabelError::Misaligned {
            rows,
            labels: labels.len(),
        });
    }
    let mut members = vec![Vec::new(); num_classes];
    for (row, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(SoftLabelError::LabelOutOfRange {
                row,
                label,
                num_classes,
            });
        }
        members[label].push(row);
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(SoftLabelError::EmptyClass(empty));
    }
    Ok(members)
}

fn euclidean(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Average foreign-class distances for every sample.
pub fn average_class_distance(
    reps: &RepresentationMatrix,
    labels: &[usize],
    num_classes: usize,
    config: &SoftLabelConfig,
) -> Result<ClassDistanceTable> {
    config.validate()?;
    let members = check_labels(reps.len(), labels, num_classes)?;
    if let Some(row) = reps
        .reps
        .outer_iter()
        .position(|r| r.iter().any(|v| !v.is_finite()))
    {
        return Err(SoftLabelError::NonFinite(row));
    }
    let mut distances = Array2::from_elem((reps.len(), num_classes), f64::NAN);
    distances
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(m, mut row)| {
            let own = reps.reps.row(m);
            for (n, rows) in members.iter().enumerate() {
                if n == labels[m] {
                    continue;
                }
                let total: f64 = rows.iter().map(|&j| euclidean(own, reps.reps.row(j))).sum();
                row[n] = (total / rows.len() as f64).max(config.distance_floor);
            }
        });
    Ok(ClassDistanceTable {
        distances,
        labels: labels.to_vec(),
    })
}

/// Confidence matrix: `gamma / r` off the true class, the row sum of those on it.
pub fn confidence_scores(table: &ClassDistanceTable, config: &SoftLabelConfig) -> Array2<f64> {
    let (n, l) = table.distances.dim();
    let mut a = Array2::zeros((n, l));
    for (m, mut row) in a.outer_iter_mut().enumerate() {
        let own = table.labels[m];
        let mut total = 0.0;
        for c in (0..l).filter(|&c| c != own) {
            let v = config.gamma / table.distances[(m, c)];
            row[c] = v;
            total += v;
        }
        row[own] = if config.strict_argmax {
            total + STRICT_ARGMAX_MARGIN
        } else {
            total
        };
    }
    a
}

/// Row-wise soft labels together with the confidences they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMatrix {
    pub probs: Array2<f64>,
    pub confidences: Array2<f64>,
    pub gamma: f64,
}

impl SoftLabelMatrix {
    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn confidence_row(&self, i: usize) -> &[f64] {
        self.confidences
            .row(i)
            .to_slice()
            .expect("confidence matrix is in standard layout")
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn soft_labels(confidences: Array2<f64>, gamma: f64) -> SoftLabelMatrix {
    let mut probs = Array2::zeros(confidences.dim());
    for (src, mut dst) in confidences.outer_iter().zip(probs.outer_iter_mut()) {
        let p = softmax_row(&src.to_vec());
        dst.iter_mut().zip(p).for_each(|(d, v)| *d = v);
    }
    let confidences = confidences.as_standard_layout().into_owned();
    SoftLabelMatrix {
        probs,
        confidences,
        gamma,
    }
}

/// Distances, confidences and softmax in one call.
pub fn build_soft_labels(
    reps: &RepresentationMatrix,
    labels: &[usize],
    num_classes: usize,
    config: &SoftLabelConfig,
) -> Result<SoftLabelMatrix> {
    let table = average_class_distance(reps, labels, num_classes, config)?;
    Ok(soft_labels(confidence_scores(&table, config), config.gamma))
}

/// Rows that break the two construction criteria.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    /// Rows whose true class is not the strict argmax.
    pub non_strict_argmax: Vec<usize>,
    /// Rows where a closer foreign class does not get strictly more probability.
    pub non_monotone: Vec<usize>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.non_strict_argmax.is_empty() && self.non_monotone.is_empty()
    }
}

/// Checks argmax and monotonicity row by row. Foreign-class distance order is read
/// from the confidences, which are `gamma / r` and therefore reverse it exactly;
/// tied distances may have tied probabilities.
pub fn validate_criteria(soft: &SoftLabelMatrix, labels: &[usize]) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (m, (&own, (p, a))) in labels
        .iter()
        .zip(soft.probs.outer_iter().zip(soft.confidences.outer_iter()))
        .enumerate()
    {
        let strict = (0..p.len()).all(|c| c == own || p[own] > p[c]);
        if !strict {
            report.non_strict_argmax.push(m);
        }
        let foreign: Vec<usize> = (0..p.len()).filter(|&c| c != own).collect();
        let monotone = foreign.iter().all(|&i| {
            foreign
                .iter()
                .all(|&j| !(a[i] > a[j]) || p[i] > p[j])
        });
        if !monotone {
            report.non_monotone.push(m);
        }
    }
    report
}

/// Cache text: `N L gamma`, then `N` probability rows, then `N` confidence rows.
pub fn format_cache(soft: &SoftLabelMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {:e}", soft.len(), soft.num_classes(), soft.gamma);
    for matrix in [&soft.probs, &soft.confidences] {
        for row in matrix.outer_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn parse_cache(text: &str) -> Result<SoftLabelMatrix> {
    let fmt_err = |line: usize, message: String| SoftLabelError::Format { line, message };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| fmt_err(1, "missing header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [n, l, g] = fields[..] else {
        return Err(fmt_err(1, format!("header must be `N L gamma`, got `{header}`")));
    };
    let n: usize = n.parse().map_err(|_| fmt_err(1, format!("bad N `{n}`")))?;
    let l: usize = l.parse().map_err(|_| fmt_err(1, format!("bad L `{l}`")))?;
    let gamma: f64 = g.parse().map_err(|_| fmt_err(1, format!("bad gamma `{g}`")))?;
    let mut matrices = [Array2::zeros((n, l)), Array2::zeros((n, l))];
    for k in 0..2 * n {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| fmt_err(k + 2, format!("expected {} rows, found {k}", 2 * n)))?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| fmt_err(idx + 1, format!("invalid value `{t}`")))
            })
            .collect::<Result<_>>()?;
        if values.len() != l {
            return Err(fmt_err(idx + 1, format!("expected {l} values, found {}", values.len())));
        }
        let target = &mut matrices[k / n];
        target.row_mut(k % n).iter_mut().zip(values).for_each(|(d, v)| *d = v);
    }
    if let Some((idx, _)) = lines.next() {
        return Err(fmt_err(idx + 1, "trailing rows after the confidence matrix".into()));
    }
    let [probs, confidences] = matrices;
    Ok(SoftLabelMatrix {
        probs,
        confidences,
        gamma,
    })
}

pub fn save_cache(soft: &SoftLabelMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_cache(soft)).map_err(|source| SoftLabelError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<SoftLabelMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SoftLabelError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_cache(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn reps(m: Array2<f64>) -> RepresentationMatrix {
        RepresentationMatrix::new(m, "test").unwrap()
    }

    #[test]
    fn averages_foreign_distances() {
        // sample 0 (class 0) at 0; class 1 at {1, 3}; class 2 at {4}
        let r = reps(array![[0.0], [1.0], [3.0], [4.0]]);
        let t = average_class_distance(&r, &[0, 1, 1, 2], 3, &SoftLabelConfig::default()).unwrap();
        assert_eq!(t.get(0, 0), None);
        assert_eq!(t.get(0, 1), Some(2.0));
        assert_eq!(t.get(0, 2), Some(4.0));
        // permuting class-1 members changes nothing
        let r2 = reps(array![[0.0], [3.0], [1.0], [4.0]]);
        let t2 = average_class_distance(&r2, &[0, 1, 1, 2], 3, &SoftLabelConfig::default()).unwrap();
        assert_eq!(t2.get(0, 1), Some(2.0));
    }

    #[test]
    fn coincident_classes_hit_the_floor() {
        let r = reps(array![[1.0, 1.0], [1.0, 1.0]]);
        let t = average_class_distance(&r, &[0, 1], 2, &SoftLabelConfig::default()).unwrap();
        assert_eq!(t.get(0, 1), Some(DEFAULT_DISTANCE_FLOOR));
    }

    #[test]
    fn empty_class_rejected() {
        let r = reps(array![[0.0], [1.0]]);
        let err = average_class_distance(&r, &[0, 2], 3, &SoftLabelConfig::default()).unwrap_err();
        assert!(matches!(err, SoftLabelError::EmptyClass(1)));
    }

    #[test]
    fn confidence_example() {
        let r = reps(array![[0.0], [1.0], [3.0], [4.0]]);
        let cfg = SoftLabelConfig::with_gamma(1.0);
        let t = average_class_distance(&r, &[0, 1, 1, 2], 3, &cfg).unwrap();
        let a = confidence_scores(&t, &cfg);
        assert_eq!(a.row(0).to_vec(), vec![0.75, 0.5, 0.25]);
        let scaled = confidence_scores(&t, &SoftLabelConfig::with_gamma(3.0));
        for (x, y) in a.iter().zip(scaled.iter()) {
            assert!((3.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_example_and_shift_invariance() {
        let p = softmax_row(&[0.75, 0.5, 0.25]);
        // e^0.75, e^0.5, e^0.25 normalised
        let e: Vec<f64> = [0.75f64, 0.5, 0.25].iter().map(|v| v.exp()).collect();
        let z: f64 = e.iter().sum();
        for (pi, ei) in p.iter().zip(&e) {
            assert!((pi - ei / z).abs() < 1e-15);
        }
        assert!((p[0] - 0.4192).abs() < 5e-5);
        assert!((p[1] - 0.3265).abs() < 5e-5);
        assert!((p[2] - 0.2543).abs() < 5e-5);
        let shifted = softmax_row(&[10.75, 10.5, 10.25]);
        for (a, b) in p.iter().zip(shifted) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(softmax_row(&[2.0; 4]), vec![0.25; 4]);
    }

    #[test]
    fn validation_passes_three_class_example() {
        let r = reps(array![[0.0], [1.0], [3.0], [4.0]]);
        let cfg = SoftLabelConfig::with_gamma(1.0);
        let soft = build_soft_labels(&r, &[0, 1, 1, 2], 3, &cfg).unwrap();
        let report = validate_criteria(&soft, &[0, 1, 1, 2]);
        assert!(report.is_clean(), "{report:?}");
    }

    #[test]
    fn binary_rows_are_uniform_and_flagged() {
        let r = reps(array![[0.0], [1.0], [5.0], [2.5]]);
        let labels = [0, 1, 1, 0];
        let soft = build_soft_labels(&r, &labels, 2, &SoftLabelConfig::default()).unwrap();
        for row in soft.probs.outer_iter() {
            assert_eq!(row.to_vec(), vec![0.5, 0.5]);
        }
        let report = validate_criteria(&soft, &labels);
        assert_eq!(report.non_strict_argmax, vec![0, 1, 2, 3]);
        assert!(report.non_monotone.is_empty());

        let repaired = SoftLabelConfig {
            strict_argmax: true,
            ..SoftLabelConfig::default()
        };
        let soft = build_soft_labels(&r, &labels, 2, &repaired).unwrap();
        assert!(validate_criteria(&soft, &labels).is_clean());
    }

    #[test]
    fn cache_round_trip_is_exact() {
        let r = reps(array![[0.0, 1.0], [1.0, 0.3], [3.0, 2.0], [4.0, -1.0], [0.2, 0.2]]);
        let labels = [0, 1, 1, 2, 0];
        let soft = build_soft_labels(&r, &labels, 3, &SoftLabelConfig::default()).unwrap();
        let text = format_cache(&soft);
        assert!(text.starts_with("5 3 1e-3\n"));
        let back = parse_cache(&text).unwrap();
        assert_eq!(back, soft);
        assert_eq!(format_cache(&back), text);
    }

    #[test]
    fn cache_with_missing_rows_rejected() {
        assert!(parse_cache("2 2 1e-3\n0.5 0.5\n0.5 0.5\n0.1 0.1\n").is_err());
    }
}
