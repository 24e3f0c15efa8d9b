//! Exact t-SNE for embedding penultimate features in two dimensions.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ReportError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    /// `None` uses `min(30, (N - 1) / 3)`.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: None,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
        }
    }
}

pub fn default_perplexity(n: usize) -> f64 {
    30f64.min((n as f64 - 1.0) / 3.0)
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Conditional affinities `p(j|i)` whose entropy matches `ln(perplexity)`, found by
/// bisection on the Gaussian precision.
fn conditional_affinities(dist: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = dist.nrows();
    let target = perplexity.ln();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let row = dist.row(i);
        let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
        let mut probs = vec![0.0; n];
        let min_d = (0..n)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::INFINITY, f64::min);
        for _ in 0..200 {
            let mut sum = 0.0;
            for j in 0..n {
                probs[j] = if j == i { 0.0 } else { (-(row[j] - min_d) * beta).exp() };
                sum += probs[j];
            }
            let mut weighted = 0.0;
            for j in 0..n {
                probs[j] /= sum;
                weighted += probs[j] * (row[j] - min_d);
            }
            // H = ln(sum) + beta * E[d], with distances shifted by min_d
            let entropy = sum.ln() + beta * weighted;
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        p.row_mut(i).iter_mut().zip(&probs).for_each(|(d, v)| *d = *v);
    }
    p
}

fn hash_row(row: ArrayView1<'_, f64>, seed: u64) -> u64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    for v in row {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Small Gaussian starting positions keyed by each row's content, so permuting the
/// input permutes the initial layout the same way.
pub fn permutation_aware_init(features: &Array2<f64>, seed: u64) -> Array2<f64> {
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut init = Array2::zeros((features.nrows(), 2));
    for (row, mut out) in features.outer_iter().zip(init.outer_iter_mut()) {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_row(row, seed));
        out[0] = normal.sample(&mut rng);
        out[1] = normal.sample(&mut rng);
    }
    init
}

/// Embeds `features` in two dimensions. Rows are processed in a canonical content
/// order, so permuting the input rows permutes the output rows exactly.
pub fn tsne_embed(features: &Array2<f64>, config: &TsneConfig) -> Result<Array2<f64>> {
    let mut order: Vec<usize> = (0..features.nrows()).collect();
    order.sort_by(|&a, &b| {
        features
            .row(a)
            .iter()
            .zip(features.row(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let canonical = features.select(Axis(0), &order);
    let init = permutation_aware_init(&canonical, config.seed);
    let embedded = tsne_embed_with_init(&canonical, init, config)?;
    let mut out = Array2::zeros(embedded.dim());
    for (pos, &row) in order.iter().enumerate() {
        out.row_mut(row).assign(&embedded.row(pos));
    }
    Ok(out)
}

/// Runs t-SNE from the given `N x 2` starting layout. The output is centred.
pub fn tsne_embed_with_init(
    features: &Array2<f64>,
    init: Array2<f64>,
    config: &TsneConfig,
) -> Result<Array2<f64>> {
    let n = features.nrows();
    if features.iter().any(|v| !v.is_finite()) {
        return Err(ReportError::Degenerate("non-finite feature".into()));
    }
    let perplexity = config.perplexity.unwrap_or_else(|| default_perplexity(n));
    if n < 4 || !(perplexity > 0.0) || (n as f64) <= 3.0 * perplexity {
        return Err(ReportError::Degenerate(format!(
            "need N > 3 * perplexity, got N = {n}, perplexity = {perplexity}"
        )));
    }
    let dist = squared_distances(features);
    if dist.iter().all(|&d| d == 0.0) {
        return Err(ReportError::Degenerate("all feature rows are identical".into()));
    }
    let cond = conditional_affinities(&dist, perplexity);
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            p[(i, j)] = ((cond[(i, j)] + cond[(j, i)]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut y = init;
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut num = Array2::<f64>::zeros((n, n));
    for iter in 0..config.iterations {
        let exaggerate = iter < config.exaggeration_iterations;
        let exaggeration = if exaggerate { config.early_exaggeration } else { 1.0 };
        let momentum = if exaggerate { 0.5 } else { 0.8 };
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[(i, 0)] - y[(j, 0)];
                let dy = y[(i, 1)] - y[(j, 1)];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[(i, j)] = v;
                num[(j, i)] = v;
                total += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[(i, j)] / total).max(1e-12);
                let mult = (exaggeration * p[(i, j)] - q) * num[(i, j)];
                grad[0] += 4.0 * mult * (y[(i, 0)] - y[(j, 0)]);
                grad[1] += 4.0 * mult * (y[(i, 1)] - y[(j, 1)]);
            }
            for d in 0..2 {
                let g = &mut gains[(i, d)];
                *g = if (grad[d] > 0.0) != (update[(i, d)] > 0.0) {
                    *g + 0.2
                } else {
                    *g * 0.8
                };
                *g = g.max(0.01);
                update[(i, d)] = momentum * update[(i, d)] - config.learning_rate * *g * grad[d];
            }
        }
        y += &update;
        center(&mut y);
    }
    Ok(y)
}

fn center(y: &mut Array2<f64>) {
    let n = y.nrows() as f64;
    for d in 0..2 {
        let mean = y.column(d).sum() / n;
        y.column_mut(d).mapv_inplace(|v| v - mean);
    }
}

/// Mean silhouette coefficient of a labelled point set under Euclidean distance.
pub fn silhouette_score(points: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = points.nrows();
    let dist = squared_distances(points).mapv(f64::sqrt);
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; classes];
        let mut counts = vec![0usize; classes];
        for j in (0..n).filter(|&j| j != i) {
            sums[labels[j]] += dist[(i, j)];
            counts[labels[j]] += 1;
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..classes)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// `x,y,label` rows with an optional leading column.
pub fn embedding_csv(coords: &Array2<f64>, labels: &[usize], tag: Option<(&str, &str)>) -> String {
    let mut out = String::new();
    if let Some((name, _)) = tag {
        out.push_str(name);
        out.push(',');
    }
    out.push_str("x,y,label\n");
    for (row, label) in coords.outer_iter().zip(labels) {
        if let Some((_, value)) = tag {
            out.push_str(value);
            out.push(',');
        }
        out.push_str(&format!("{:.6},{:.6},{label}\n", row[0], row[1]));
    }
    out
}
