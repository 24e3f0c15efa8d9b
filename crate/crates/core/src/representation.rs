//! Per-sample representation vectors used to build soft labels.
//!
//! Three sources are supported: vectors produced elsewhere and stored in a text file,
//! a deterministic random-convolution encoder, and the identity mapping that hands the
//! raw series straight to the distance computation.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ndarray::parallel::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledDataset;

pub const DEFAULT_NUM_KERNELS: usize = 256;
const KERNEL_LENGTHS: [usize; 3] = [7, 9, 11];

#[derive(Debug, Error)]
pub enum RepresentationError {
    #[error("failed to access {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("precomputed encoder needs a representation file")]
    MissingFile,
    #[error("num_kernels must be at least 1")]
    NoKernels,
    #[error("representation has {found} rows, dataset has {expected}")]
    RowCount { found: usize, expected: usize },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("non-finite representation entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
}

pub type Result<T, E = RepresentationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Precomputed,
    RandomConv,
    Identity,
}

/// How each random-convolution kernel's activation map is reduced before the
/// proportion-of-positive-values feature is appended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Max,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    #[serde(default)]
    pub file_path: Option<PathBuf>,
    #[serde(default = "default_kernels")]
    pub num_kernels: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pooling: Pooling,
}

fn default_kernels() -> usize {
    DEFAULT_NUM_KERNELS
}

impl EncoderSpec {
    pub fn identity() -> Self {
        Self {
            kind: EncoderKind::Identity,
            file_path: None,
            num_kernels: DEFAULT_NUM_KERNELS,
            seed: 0,
            pooling: Pooling::Max,
        }
    }

    pub fn random_conv(num_kernels: usize, seed: u64) -> Self {
        Self {
            kind: EncoderKind::RandomConv,
            num_kernels,
            seed,
            ..Self::identity()
        }
    }

    pub fn precomputed(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: EncoderKind::Precomputed,
            file_path: Some(path.into()),
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == EncoderKind::Precomputed && self.file_path.is_none() {
            return Err(RepresentationError::MissingFile);
        }
        if self.num_kernels == 0 {
            return Err(RepresentationError::NoKernels);
        }
        Ok(())
    }

    /// Short identifier used in cache file names and result records.
    pub fn key(&self) -> String {
        match self.kind {
            EncoderKind::Identity => "identity".to_owned(),
            EncoderKind::RandomConv => {
                let pool = match self.pooling {
                    Pooling::Max => "max",
                    Pooling::Last => "last",
                };
                format!("rconv-k{}-s{}-{pool}", self.num_kernels, self.seed)
            }
            EncoderKind::Precomputed => {
                let stem = self
                    .file_path
                    .as_deref()
                    .and_then(Path::file_stem)
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                format!("pre-{stem}")
            }
        }
    }
}

/// `N x D` matrix, row `i` being the representation of sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationMatrix {
    pub reps: Array2<f64>,
    pub source: String,
}

impl RepresentationMatrix {
    pub fn new(reps: Array2<f64>, source: impl Into<String>) -> Result<Self> {
        check_finite(&reps)?;
        Ok(Self {
            reps,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.reps.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.reps.ncols()
    }
}

fn check_finite(reps: &Array2<f64>) -> Result<()> {
    if let Some(((row, col), _)) = reps.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(RepresentationError::NonFinite { row, col });
    }
    Ok(())
}

/// One random dilated convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvKernel {
    fn span(&self) -> usize {
        (self.weights.len() - 1) * self.dilation + 1
    }

    /// Returns `(max or last activation, proportion of positive activations)`.
    pub fn features(&self, series: ArrayView1<'_, f64>, pooling: Pooling) -> (f64, f64) {
        let t = series.len() as isize;
        let out_len = series.len() + 2 * self.padding - self.span() + 1;
        let mut max = f64::NEG_INFINITY;
        let mut last = 0.0;
        let mut positive = 0usize;
        for i in 0..out_len {
            let start = i as isize - self.padding as isize;
            let mut acc = self.bias;
            for (j, w) in self.weights.iter().enumerate() {
                let idx = start + (j * self.dilation) as isize;
                if (0..t).contains(&idx) {
                    acc += w * series[idx as usize];
                }
            }
            if acc > 0.0 {
                positive += 1;
            }
            max = max.max(acc);
            last = acc;
        }
        let pooled = match pooling {
            Pooling::Max => max,
            Pooling::Last => last,
        };
        (pooled, positive as f64 / out_len as f64)
    }
}

/// Draws `count` kernels for series of length `series_length`, fully determined by `seed`.
pub fn random_kernels(count: usize, series_length: usize, seed: u64) -> Vec<ConvKernel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let len = KERNEL_LENGTHS[rng.random_range(0..KERNEL_LENGTHS.len())];
            let weights: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            let bias = rng.random_range(-1.0..=1.0);
            let max_exponent = if series_length > len {
                ((series_length - 1) as f64 / (len - 1) as f64).log2().floor() as u32
            } else {
                0
            };
            let dilation = 1usize << rng.random_range(0..=max_exponent);
            let mut padding = if rng.random_bool(0.5) {
                (len - 1) * dilation / 2
            } else {
                0
            };
            let span = (len - 1) * dilation + 1;
            if series_length + 2 * padding < span {
                padding = (span - series_length).div_ceil(2);
            }
            ConvKernel {
                weights,
                bias,
                dilation,
                padding,
            }
        })
        .collect()
}

/// Maps every series of `dataset` to its representation.
pub fn encode(dataset: &LabeledDataset, spec: &EncoderSpec) -> Result<RepresentationMatrix> {
    spec.validate()?;
    match spec.kind {
        EncoderKind::Identity => RepresentationMatrix::new(dataset.samples.clone(), spec.key()),
        EncoderKind::Precomputed => {
            let path = spec.file_path.as_ref().ok_or(RepresentationError::MissingFile)?;
            let loaded = load_representations(path)?;
            if loaded.len() != dataset.len() {
                return Err(RepresentationError::RowCount {
                    found: loaded.len(),
                    expected: dataset.len(),
                });
            }
            Ok(RepresentationMatrix {
                source: spec.key(),
                ..loaded
            })
        }
        EncoderKind::RandomConv => {
            let kernels = random_kernels(spec.num_kernels, dataset.series_length(), spec.seed);
            let dim = 2 * kernels.len();
            let mut reps = Array2::zeros((dataset.len(), dim));
            reps.axis_iter_mut(Axis(0))
                .into_par_iter()
                .zip(dataset.samples.axis_iter(Axis(0)).into_par_iter())
                .for_each(|(mut out, series)| {
                    for (k, kernel) in kernels.iter().enumerate() {
                        let (pooled, ppv) = kernel.features(series, spec.pooling);
                        out[2 * k] = pooled;
                        out[2 * k + 1] = ppv;
                    }
                });
            RepresentationMatrix::new(reps, spec.key())
        }
    }
}

/// Text format: a header line `N D` followed by `N` rows of `D` space-separated values.
pub fn format_representations(reps: &Array2<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", reps.nrows(), reps.ncols());
    for row in reps.outer_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn save_representations(reps: &RepresentationMatrix, path: impl AsRef<Path>) -> Result<()> {
    check_finite(&reps.reps)?;
    let path = path.as_ref();
    fs::write(path, format_representations(&reps.reps)).map_err(|source| RepresentationError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn parse_representations(text: &str) -> Result<Array2<f64>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(RepresentationError::Format {
        line: 1,
        message: "missing `N D` header".into(),
    })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| RepresentationError::Format {
            line: 1,
            message: format!("malformed header `{header}`"),
        })?;
    let [n, d] = dims[..] else {
        return Err(RepresentationError::Format {
            line: 1,
            message: format!("header must hold two integers, got `{header}`"),
        });
    };
    let mut reps = Array2::zeros((n, d));
    let mut rows = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if rows == n {
            return Err(RepresentationError::Format {
                line: line_no,
                message: format!("more than the {n} rows declared in the header"),
            });
        }
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != d {
            return Err(RepresentationError::Format {
                line: line_no,
                message: format!("expected {d} values, found {}", values.len()),
            });
        }
        for (col, tok) in values.into_iter().enumerate() {
            let v: f64 = tok.parse().map_err(|_| RepresentationError::Format {
                line: line_no,
                message: format!("non-numeric token `{tok}`"),
            })?;
            if !v.is_finite() {
                return Err(RepresentationError::NonFinite { row: rows, col });
            }
            reps[(rows, col)] = v;
        }
        rows += 1;
    }
    if rows != n {
        return Err(RepresentationError::Format {
            line: rows + 2,
            message: format!("header declares {n} rows, file has {rows}"),
        });
    }
    Ok(reps)
}

pub fn load_representations(path: impl AsRef<Path>) -> Result<RepresentationMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| RepresentationError::Io {
        path: path.to_owned(),
        source,
    })?;
    let reps = parse_representations(&text)?;
    Ok(RepresentationMatrix {
        reps,
        source: path.display().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LabelMap, Split};
    use ndarray::array;

    fn toy(n: usize, t: usize) -> LabeledDataset {
        let samples = Array2::from_shape_fn((n, t), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        LabeledDataset {
            name: "toy".into(),
            split: Split::Train,
            samples,
            labels: (0..n).map(|i| i % 2).collect(),
            label_map: LabelMap::fit(["0", "1"]).unwrap(),
        }
    }

    #[test]
    fn identity_returns_samples() {
        let ds = toy(3, 10);
        let reps = encode(&ds, &EncoderSpec::identity()).unwrap();
        assert_eq!(reps.reps, ds.samples);
    }

    #[test]
    fn random_conv_is_deterministic_and_sized() {
        let ds = toy(5, 40);
        let spec = EncoderSpec::random_conv(256, 17);
        let a = encode(&ds, &spec).unwrap();
        let b = encode(&ds, &spec).unwrap();
        assert_eq!(a.reps.ncols(), 512);
        assert_eq!(a.reps, b.reps);
        let other = encode(&ds, &EncoderSpec::random_conv(256, 18)).unwrap();
        assert_ne!(a.reps, other.reps);
    }

    #[test]
    fn ppv_features_in_unit_interval() {
        for t in [3, 9, 64] {
            let ds = toy(4, t);
            let reps = encode(&ds, &EncoderSpec::random_conv(50, 3)).unwrap();
            for row in reps.reps.outer_iter() {
                for k in 0..50 {
                    assert!((0.0..=1.0).contains(&row[2 * k + 1]));
                }
            }
        }
    }

    #[test]
    fn kernels_fit_the_series() {
        for t in [2, 5, 13, 200] {
            for k in random_kernels(100, t, 9) {
                assert!(t + 2 * k.padding >= k.span());
                assert!(k.dilation.is_power_of_two());
                assert!((-1.0..=1.0).contains(&k.bias));
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let m = RepresentationMatrix::new(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], "x").unwrap();
        let back = parse_representations(&format_representations(&m.reps)).unwrap();
        assert_eq!(back, m.reps);
        let odd = array![[0.1 + 0.2, -1e-300], [std::f64::consts::PI, 1e300]];
        assert_eq!(parse_representations(&format_representations(&odd)).unwrap(), odd);
    }

    #[test]
    fn header_row_mismatch_rejected() {
        assert!(parse_representations("2 3\n1 2 3\n4 5 6\n7 8 9\n").is_err());
        assert!(parse_representations("3 3\n1 2 3\n4 5 6\n").is_err());
        assert!(parse_representations("2 2\n1 2\n4 x\n").is_err());
    }

    #[test]
    fn non_finite_token_rejected() {
        let err = parse_representations("1 2\n1 inf\n").unwrap_err();
        assert!(matches!(err, RepresentationError::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn precomputed_row_count_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reps.txt");
        fs::write(&path, "2 1\n1\n2\n").unwrap();
        let err = encode(&toy(3, 4), &EncoderSpec::precomputed(&path)).unwrap_err();
        assert!(matches!(err, RepresentationError::RowCount { found: 2, expected: 3 }));
        let ok = encode(&toy(2, 4), &EncoderSpec::precomputed(&path)).unwrap();
        assert_eq!(ok.reps, array![[1.0], [2.0]]);
    }

    #[test]
    fn precomputed_requires_path() {
        let spec = EncoderSpec {
            file_path: None,
            ..EncoderSpec::precomputed("x")
        };
        assert!(matches!(spec.validate(), Err(RepresentationError::MissingFile)));
    }
}
