//! Rank statistics behind critical-difference diagrams: per-dataset fractional ranks,
//! the Friedman test, pairwise Wilcoxon signed-rank tests and Holm's step-down
//! correction.

use ndarray::Array2;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::{AccuracyMatrix, ReportError};

pub const DEFAULT_ALPHA: f64 = 0.05;
/// Above this many non-zero differences the Wilcoxon p-value uses the normal
/// approximation instead of the exact null distribution.
const EXACT_WILCOXON_MAX_N: usize = 50;

/// Fractional ranks of `scores`, highest score first. Tied scores share the mean of the
/// positions they occupy.
pub fn fractional_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let mean = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

/// Ranks of every row (dataset) of a `datasets x methods` matrix.
pub fn rank_matrix(values: &Array2<f64>) -> Array2<f64> {
    let mut ranks = Array2::zeros(values.dim());
    for (src, mut dst) in values.outer_iter().zip(ranks.outer_iter_mut()) {
        let r = fractional_ranks(&src.to_vec());
        dst.iter_mut().zip(r).for_each(|(d, v)| *d = v);
    }
    ranks
}

/// Friedman chi-square statistic with tie correction and its p-value.
pub fn friedman_test(ranks: &Array2<f64>) -> (f64, f64) {
    let (n, k) = ranks.dim();
    if n == 0 || k < 2 {
        return (0.0, 1.0);
    }
    let (nf, kf) = (n as f64, k as f64);
    let sum_sq: f64 = ranks.columns().into_iter().map(|c| c.sum().powi(2)).sum();
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * sum_sq - 3.0 * nf * (kf + 1.0);
    let ties: f64 = ranks
        .outer_iter()
        .map(|row| {
            let mut sorted = row.to_vec();
            sorted.sort_by(f64::total_cmp);
            sorted
                .chunk_by(|a, b| a == b)
                .map(|g| {
                    let t = g.len() as f64;
                    t * t * t - t
                })
                .sum::<f64>()
        })
        .sum();
    let correction = 1.0 - ties / (nf * kf * (kf * kf - 1.0));
    if correction <= 1e-12 {
        return (0.0, 1.0);
    }
    let stat = (raw / correction).max(0.0);
    let chi = ChiSquared::new(kf - 1.0).expect("positive degrees of freedom");
    (stat, chi.sf(stat))
}

/// Two-sided Wilcoxon signed-rank p-value for paired samples. Zero differences are
/// discarded; all-zero input gives `p = 1`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> f64 {
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return 1.0;
    }
    // ascending ranks of |d| are the descending ranks of -|d|
    let neg_abs: Vec<f64> = diffs.iter().map(|d| -d.abs()).collect();
    let ranks = fractional_ranks(&neg_abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    if n <= EXACT_WILCOXON_MAX_N {
        exact_signed_rank_p(&ranks, w_plus)
    } else {
        normal_signed_rank_p(&ranks, w_plus)
    }
}

/// Exact null distribution of the positive-rank sum, computed over doubled ranks so
/// half-integer tie ranks stay integral.
fn exact_signed_rank_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all: f64 = counts.iter().sum();
    let w = (2.0 * w_plus).round() as usize;
    let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
    let upper: f64 = counts[w..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_signed_rank_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let var: f64 = ranks.iter().map(|r| r * r).sum::<f64>() / 4.0;
    if var == 0.0 {
        return 1.0;
    }
    let z = (w_plus - mean).abs() / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * normal.sf(z)).min(1.0)
}

/// Holm step-down procedure: which of `p_values` are rejected at level `alpha`.
pub fn holm_reject(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut reject = vec![false; m];
    for (i, &idx) in order.iter().enumerate() {
        if p_values[idx] <= alpha / (m - i) as f64 {
            reject[idx] = true;
        } else {
            break;
        }
    }
    reject
}

/// Average ranks, test outcomes and groups of statistically indistinguishable methods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub methods: Vec<String>,
    pub average_ranks: Vec<f64>,
    pub num_datasets: usize,
    pub friedman_statistic: f64,
    pub friedman_p: f64,
    /// Unadjusted pairwise Wilcoxon p-values, `methods x methods`.
    pub pairwise_p: Vec<Vec<f64>>,
    /// Pairwise significance after Holm correction. All false when the Friedman test
    /// does not reject.
    pub significant: Vec<Vec<bool>>,
    /// Maximal runs of methods, adjacent by average rank, with no significant pair.
    pub cliques: Vec<Vec<String>>,
}

impl RankReport {
    /// Methods ordered from best to worst average rank.
    pub fn ranking(&self) -> Vec<(&str, f64)> {
        let mut order: Vec<usize> = (0..self.methods.len()).collect();
        order.sort_by(|&a, &b| {
            self.average_ranks[a]
                .total_cmp(&self.average_ranks[b])
                .then_with(|| a.cmp(&b))
        });
        order
            .into_iter()
            .map(|i| (self.methods[i].as_str(), self.average_ranks[i]))
            .collect()
    }
}

pub fn rank_report(matrix: &AccuracyMatrix, alpha: f64) -> Result<RankReport, ReportError> {
    let (n, k) = matrix.values.dim();
    if k < 2 {
        return Err(ReportError::TooFewMethods(k));
    }
    if n < 3 {
        return Err(ReportError::TooFewDatasets(n));
    }
    let ranks = rank_matrix(&matrix.values);
    let average_ranks: Vec<f64> = ranks.columns().into_iter().map(|c| c.sum() / n as f64).collect();
    let (friedman_statistic, friedman_p) = friedman_test(&ranks);

    let mut pairwise_p = vec![vec![1.0; k]; k];
    let mut pairs = Vec::new();
    let mut pvals = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let p = wilcoxon_signed_rank(
                &matrix.values.column(i).to_vec(),
                &matrix.values.column(j).to_vec(),
            );
            pairwise_p[i][j] = p;
            pairwise_p[j][i] = p;
            pairs.push((i, j));
            pvals.push(p);
        }
    }
    let mut significant = vec![vec![false; k]; k];
    if friedman_p < alpha {
        for (&(i, j), rejected) in pairs.iter().zip(holm_reject(&pvals, alpha)) {
            significant[i][j] = rejected;
            significant[j][i] = rejected;
        }
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| average_ranks[a].total_cmp(&average_ranks[b]).then_with(|| a.cmp(&b)));
    let mut cliques: Vec<Vec<String>> = Vec::new();
    let mut last_end = 0usize;
    for start in 0..k {
        let mut end = start;
        while end + 1 < k
            && (start..=end).all(|p| !significant[order[p]][order[end + 1]])
        {
            end += 1;
        }
        if end > start && (cliques.is_empty() || end > last_end) {
            cliques.push(order[start..=end].iter().map(|&i| matrix.methods[i].clone()).collect());
            last_end = end;
        }
    }

    Ok(RankReport {
        methods: matrix.methods.clone(),
        average_ranks,
        num_datasets: n,
        friedman_statistic,
        friedman_p,
        pairwise_p,
        significant,
        cliques,
    })
}
