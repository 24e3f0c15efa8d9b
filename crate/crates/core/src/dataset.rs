//! UCR-2018 archive reader and series preprocessing.
//!
//! A dataset lives in `<archive>/<Name>/<Name>_TRAIN.tsv` and `<Name>_TEST.tsv`. Every
//! line holds a class token followed by tab-separated values, with `NaN` marking a
//! missing observation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to the standard deviation during z-normalisation.
pub const STD_FLOOR: f64 = 1e-8;

/// UCR-2018 datasets whose series have different lengths.
pub const VARIABLE_LENGTH_DATASETS: &[&str] = &[
    "AllGestureWiimoteX",
    "AllGestureWiimoteY",
    "AllGestureWiimoteZ",
    "GestureMidAirD1",
    "GestureMidAirD2",
    "GestureMidAirD3",
    "GesturePebbleZ1",
    "GesturePebbleZ2",
    "PickupGestureWiimoteZ",
    "PLAID",
    "ShakeGestureWiimoteZ",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset file contains no records")]
    Empty,
    #[error("series {index} has length {found}, expected {expected} (variable-length datasets are not supported)")]
    LengthMismatch {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("series {index} has no observed values")]
    AllMissing { index: usize },
    #[error("label `{0}` does not occur in the training split")]
    UnknownLabel(String),
    #[error("need at least two distinct classes, found {0}")]
    TooFewClasses(usize),
    #[error("no dataset files found under {0}")]
    MissingFiles(PathBuf),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Test => f.write_str("test"),
        }
    }
}

/// One parsed line of a UCR file. `None` marks a missing observation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub label_token: String,
    pub values: Vec<Option<f64>>,
}

/// Bijection between the original class tokens and `0..L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    tokens: Vec<String>,
}

impl LabelMap {
    /// Builds the map from the distinct tokens of a split. Tokens are ordered
    /// numerically when all of them parse as numbers, lexicographically otherwise.
    pub fn fit<'a, I>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut distinct: Vec<String> = tokens.into_iter().map(str::to_owned).collect();
        distinct.sort();
        distinct.dedup();
        let numeric: Option<Vec<f64>> = distinct.iter().map(|t| t.parse::<f64>().ok()).collect();
        if let Some(values) = numeric {
            let mut paired: Vec<(f64, String)> = values.into_iter().zip(distinct).collect();
            paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            distinct = paired.into_iter().map(|(_, t)| t).collect();
        }
        if distinct.len() < 2 {
            return Err(DatasetError::TooFewClasses(distinct.len()));
        }
        Ok(Self { tokens: distinct })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_btree(&self) -> BTreeMap<String, usize> {
        self.tokens.iter().cloned().zip(0..).collect()
    }
}

/// A preprocessed split: `N` equal-length series and their class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub split: Split,
    /// `N x T`, one series per row.
    pub samples: Array2<f64>,
    pub labels: Vec<usize>,
    pub label_map: LabelMap,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn series_length(&self) -> usize {
        self.samples.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    /// Number of samples per class index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

fn parse_value(token: &str) -> Option<Option<f64>> {
    let token = token.trim();
    if token.eq_ignore_ascii_case("nan") {
        return Some(None);
    }
    token.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
}

/// Parses the text of a UCR-2018 file.
pub fn parse_ucr_str(text: &str) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields: Vec<&str> = line.split('\t').collect();
        if fields.len() == 1 && line.contains(',') {
            fields = line.split(',').collect();
        }
        let label = fields[0].trim();
        if label.is_empty() {
            return Err(DatasetError::Parse {
                line: line_no,
                message: "missing class label".into(),
            });
        }
        let values = fields[1..]
            .iter()
            .map(|tok| {
                parse_value(tok).ok_or_else(|| DatasetError::Parse {
                    line: line_no,
                    message: format!("non-numeric value `{}`", tok.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(DatasetError::Parse {
                line: line_no,
                message: "no series values after the label".into(),
            });
        }
        records.push(RawRecord {
            label_token: label.to_owned(),
            values,
        });
    }
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(records)
}

pub fn parse_ucr_file(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_ucr_str(&text)
}

/// Fills missing values by linear interpolation between the nearest observed
/// neighbours; leading and trailing gaps take the nearest observed value.
pub fn interpolate_missing(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let observed: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();
    let (&(first_i, first_v), &(last_i, last_v)) = (observed.first()?, observed.last()?);
    let mut out = Vec::with_capacity(values.len());
    let mut next = 0usize;
    for (i, v) in values.iter().enumerate() {
        match v {
            Some(x) => {
                out.push(*x);
                next += 1;
            }
            None if i < first_i => out.push(first_v),
            None if i > last_i => out.push(last_v),
            None => {
                let (li, lv) = observed[next - 1];
                let (ri, rv) = observed[next];
                let w = (i - li) as f64 / (ri - li) as f64;
                out.push(lv + w * (rv - lv));
            }
        }
    }
    Some(out)
}

/// Standardises a series in place using the population standard deviation.
pub fn z_normalize(series: &mut [f64]) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    for x in series.iter_mut() {
        *x = (*x - mean) / std;
    }
}

/// Interpolates, optionally z-normalises and label-encodes a split.
///
/// The training split should be encoded with `LabelMap::fit` over its own tokens and
/// the same map passed for the test split.
pub fn preprocess(
    records: &[RawRecord],
    name: &str,
    split: Split,
    normalize: bool,
    label_map: &LabelMap,
) -> Result<LabeledDataset> {
    let first = records.first().ok_or(DatasetError::Empty)?;
    let expected = first.values.len();
    let mut samples = Array2::zeros((records.len(), expected));
    let mut labels = Vec::with_capacity(records.len());
    for (index, record) in records.iter().enumerate() {
        if record.values.len() != expected {
            return Err(DatasetError::LengthMismatch {
                index,
                found: record.values.len(),
                expected,
            });
        }
        let mut series =
            interpolate_missing(&record.values).ok_or(DatasetError::AllMissing { index })?;
        if normalize {
            z_normalize(&mut series);
        }
        samples
            .row_mut(index)
            .iter_mut()
            .zip(series)
            .for_each(|(dst, v)| *dst = v);
        let y = label_map
            .index_of(&record.label_token)
            .ok_or_else(|| DatasetError::UnknownLabel(record.label_token.clone()))?;
        labels.push(y);
    }
    Ok(LabeledDataset {
        name: name.to_owned(),
        split,
        samples,
        labels,
        label_map: label_map.clone(),
    })
}

fn split_file(dir: &Path, name: &str, split: Split) -> Option<PathBuf> {
    let stem = match split {
        Split::Train => format!("{name}_TRAIN"),
        Split::Test => format!("{name}_TEST"),
    };
    ["tsv", "txt"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// Loads both splits of the dataset stored in `dir`. The dataset name is the
/// directory's final component.
pub fn load_ucr_dataset(
    dir: impl AsRef<Path>,
    normalize: bool,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let train_path =
        split_file(dir, &name, Split::Train).ok_or_else(|| DatasetError::MissingFiles(dir.into()))?;
    let test_path =
        split_file(dir, &name, Split::Test).ok_or_else(|| DatasetError::MissingFiles(dir.into()))?;
    let train_records = parse_ucr_file(train_path)?;
    let test_records = parse_ucr_file(test_path)?;
    let label_map = LabelMap::fit(train_records.iter().map(|r| r.label_token.as_str()))?;
    let train = preprocess(&train_records, &name, Split::Train, normalize, &label_map)?;
    let test = preprocess(&test_records, &name, Split::Test, normalize, &label_map)?;
    if train.series_length() != test.series_length() {
        return Err(DatasetError::LengthMismatch {
            index: 0,
            found: test.series_length(),
            expected: train.series_length(),
        });
    }
    Ok((train, test))
}

/// Names of every dataset directory under `root` that holds both split files and is
/// not a known variable-length problem. Sorted by name.
pub fn list_datasets(root: impl AsRef<Path>) -> Result<Vec<String>> {
    let root = root.as_ref();
    let entries = fs::read_dir(root).map_err(|source| DatasetError::Io {
        path: root.to_owned(),
        source,
    })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|name| {
            let dir = root.join(name);
            split_file(&dir, name, Split::Train).is_some()
                && split_file(&dir, name, Split::Test).is_some()
        })
        .filter(|name| !VARIABLE_LENGTH_DATASETS.contains(&name.as_str()))
        .collect();
    names.sort();
    Ok(names)
}

/// Writes records in UCR-2018 layout. Values are written in shortest round-trip form.
pub fn write_ucr_file(path: impl AsRef<Path>, records: &[RawRecord]) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for record in records {
        write!(out, "{}", record.label_token)?;
        for v in &record.values {
            match v {
                Some(x) => write!(out, "\t{x}")?,
                None => write!(out, "\tNaN")?,
            }
        }
        writeln!(out)?;
    }
    out.flush()
}
