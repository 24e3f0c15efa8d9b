//! Generators for synthetic problems of the UCR archive, written out in UCR-2018 layout
//! so the pipeline can run without downloading the archive.
//!
//! `CBF`, `SyntheticControl` and `TwoPatterns` follow their published generative
//! recipes. `BME` and `UMD` reproduce the archive's descriptions (a bell at the
//! beginning, middle or end; a bell pointing up, absent, or pointing down).

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{preprocess, write_ucr_file, LabelMap, LabeledDataset, RawRecord, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Cbf,
    SyntheticControl,
    TwoPatterns,
    Bme,
    Umd,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 5] = [
        SyntheticKind::Cbf,
        SyntheticKind::SyntheticControl,
        SyntheticKind::TwoPatterns,
        SyntheticKind::Bme,
        SyntheticKind::Umd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Cbf => "CBF",
            SyntheticKind::SyntheticControl => "SyntheticControl",
            SyntheticKind::TwoPatterns => "TwoPatterns",
            SyntheticKind::Bme => "BME",
            SyntheticKind::Umd => "UMD",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }

    pub fn num_classes(self) -> usize {
        match self {
            SyntheticKind::SyntheticControl => 6,
            SyntheticKind::TwoPatterns => 4,
            _ => 3,
        }
    }

    pub fn series_length(self) -> usize {
        match self {
            SyntheticKind::SyntheticControl => 60,
            SyntheticKind::Umd => 150,
            _ => 128,
        }
    }

    /// Small train/test sizes in the spirit of the archive's splits.
    pub fn default_sizes(self) -> (usize, usize) {
        match self {
            SyntheticKind::Cbf => (30, 150),
            SyntheticKind::SyntheticControl => (60, 120),
            SyntheticKind::TwoPatterns => (100, 200),
            SyntheticKind::Bme => (30, 150),
            SyntheticKind::Umd => (36, 144),
        }
    }

    /// One series of class `class` (0-based).
    pub fn sample<R: Rng>(self, class: usize, rng: &mut R) -> Vec<f64> {
        let t = self.series_length();
        match self {
            SyntheticKind::Cbf => cbf(class, t, rng),
            SyntheticKind::SyntheticControl => synthetic_control(class, t, rng),
            SyntheticKind::TwoPatterns => two_patterns(class, t, rng),
            SyntheticKind::Bme => bme(class, t, rng),
            SyntheticKind::Umd => umd(class, t, rng),
        }
    }

    /// Class-balanced records; class `c` is written with label token `c + 1`.
    pub fn records(self, count: usize, seed: u64) -> Vec<RawRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (self as u64).wrapping_mul(0x9E37_79B9));
        (0..count)
            .map(|i| {
                let class = i % self.num_classes();
                RawRecord {
                    label_token: (class + 1).to_string(),
                    values: self.sample(class, &mut rng).into_iter().map(Some).collect(),
                }
            })
            .collect()
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn cbf<R: Rng>(class: usize, len: usize, rng: &mut R) -> Vec<f64> {
    let a = rng.random_range(16.0..32.0);
    let b = a + rng.random_range(32.0..96.0);
    let amp = 6.0 + normal(rng);
    (1..=len)
        .map(|t| {
            let t = t as f64;
            let inside = (a..=b).contains(&t);
            let shape = match class {
                0 => 1.0,
                1 => (t - a) / (b - a),
                _ => (b - t) / (b - a),
            };
            let signal = if inside { amp * shape } else { 0.0 };
            signal + normal(rng)
        })
        .collect()
}

fn synthetic_control<R: Rng>(class: usize, len: usize, rng: &mut R) -> Vec<f64> {
    let (m, s) = (30.0, 2.0);
    let period = rng.random_range(10.0..15.0);
    let amp = rng.random_range(10.0..15.0);
    let slope = rng.random_range(0.2..0.5);
    let shift = rng.random_range(7.5..20.0);
    let onset = rng.random_range(len as f64 / 3.0..2.0 * len as f64 / 3.0);
    (0..len)
        .map(|t| {
            let tf = t as f64;
            let base = m + rng.random_range(-3.0..3.0) * s;
            base + match class {
                0 => 0.0,
                1 => amp * (2.0 * PI * tf / period).sin(),
                2 => slope * tf,
                3 => -slope * tf,
                4 => shift * f64::from(u8::from(tf >= onset)),
                _ => -shift * f64::from(u8::from(tf >= onset)),
            }
        })
        .collect()
}

fn two_patterns<R: Rng>(class: usize, len: usize, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..len).map(|_| normal(rng)).collect();
    let first_up = class < 2;
    let second_up = class % 2 == 0;
    let quarter = len / 4;
    for (up, region_start) in [(first_up, 0), (second_up, len / 2)] {
        let width = rng.random_range(quarter / 2..=quarter);
        let start = region_start + rng.random_range(0..=len / 2 - width);
        for (k, v) in x[start..start + width].iter_mut().enumerate() {
            let high = (k >= width / 2) == up;
            *v = if high { 5.0 } else { -5.0 };
        }
    }
    x
}

fn bell(t: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((t - center) / width).powi(2)).exp()
}

fn bme<R: Rng>(class: usize, len: usize, rng: &mut R) -> Vec<f64> {
    let third = len as f64 / 3.0;
    let center = third * class as f64 + rng.random_range(0.25 * third..0.75 * third);
    let width = rng.random_range(3.0..6.0);
    let amp = rng.random_range(2.0..4.0);
    // a wide plateau shared by every class makes the bell position the only cue
    let plateau = rng.random_range(0.5..1.5);
    (0..len)
        .map(|t| {
            let tf = t as f64;
            amp * bell(tf, center, width) + plateau * bell(tf, len as f64 / 2.0, len as f64 / 4.0)
                + 0.3 * normal(rng)
        })
        .collect()
}

fn umd<R: Rng>(class: usize, len: usize, rng: &mut R) -> Vec<f64> {
    let center = rng.random_range(0.2 * len as f64..0.8 * len as f64);
    let width = rng.random_range(5.0..10.0);
    let amp = rng.random_range(2.0..4.0);
    let sign = match class {
        0 => 1.0,
        1 => 0.0,
        _ => -1.0,
    };
    let drift = rng.random_range(-0.01..0.01);
    (0..len)
        .map(|t| {
            let tf = t as f64;
            sign * amp * bell(tf, center, width) + drift * tf + 0.3 * normal(rng)
        })
        .collect()
}

/// Two-class toy problem: class 0 carries a positive half-sine bump, class 1 a negative
/// one, plus small noise. The classes are linearly separable by the sign of the bump.
pub fn separable_toy(n_train: usize, n_test: usize, length: usize, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |count: usize| -> Vec<RawRecord> {
        (0..count)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                let amp = rng.random_range(0.8..1.2);
                let values = (0..length)
                    .map(|t| {
                        let bump = (PI * (t as f64 + 0.5) / length as f64).sin();
                        Some(sign * amp * bump + 0.1 * normal(&mut rng))
                    })
                    .collect();
                RawRecord {
                    label_token: (i % 2).to_string(),
                    values,
                }
            })
            .collect()
    };
    let train = make(n_train);
    let test = make(n_test);
    let map = LabelMap::fit(["0", "1"]).expect("two tokens");
    (
        preprocess(&train, "Toy", Split::Train, false, &map).expect("well-formed toy data"),
        preprocess(&test, "Toy", Split::Test, false, &map).expect("well-formed toy data"),
    )
}

/// Writes `<root>/<Name>/<Name>_TRAIN.tsv` and `_TEST.tsv`.
pub fn write_dataset(
    root: impl AsRef<Path>,
    kind: SyntheticKind,
    sizes: (usize, usize),
    seed: u64,
) -> io::Result<()> {
    let dir = root.as_ref().join(kind.name());
    fs::create_dir_all(&dir)?;
    let train = kind.records(sizes.0, seed);
    let test = kind.records(sizes.1, seed.wrapping_add(1_000_003));
    write_ucr_file(dir.join(format!("{}_TRAIN.tsv", kind.name())), &train)?;
    write_ucr_file(dir.join(format!("{}_TEST.tsv", kind.name())), &test)
}

/// Writes every generator with its default sizes.
pub fn write_archive(root: impl AsRef<Path>, seed: u64) -> io::Result<Vec<String>> {
    SyntheticKind::ALL
        .into_iter()
        .map(|kind| {
            write_dataset(&root, kind, kind.default_sizes(), seed)?;
            Ok(kind.name().to_owned())
        })
        .collect()
}
