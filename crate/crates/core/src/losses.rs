//! Training objectives over a single row of logits, with analytic gradients.
//!
//! | method     | objective                                                  |
//! |------------|------------------------------------------------------------|
//! | `baseline` | `CE(z, y)`                                                 |
//! | `ls`       | `CE(z, (1 - eps) onehot(y) + eps / L)`                     |
//! | `cp`       | `CE(z, y) + beta KL(softmax(z) \|\| u)`                     |
//! | `ss`       | `CE(z, y) + beta KL(softmax(a / tau) \|\| softmax(z / tau))` |
//!
//! `a` is the cached confidence row of the sample's soft label. The KL term carries no
//! `tau^2` factor.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::softlabel::softmax_row;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("non-finite logit at index {0}")]
    NonFiniteLogit(usize),
    #[error("target class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("target has {found} entries, logits have {expected}")]
    LengthMismatch { found: usize, expected: usize },
    #[error("representation soft-label loss needs the sample's confidence row")]
    MissingSoftLabels,
    #[error("invalid method configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = LossError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Ss,
    Ls,
    Cp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::Ss, Method::Ls, Method::Cp];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Ss => "ss",
            Method::Ls => "ls",
            Method::Cp => "cp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| LossError::InvalidConfig(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    /// Label-smoothing mixing weight.
    pub epsilon: f64,
    /// Weight of the penalty or KL term.
    pub beta: f64,
    /// Temperature of the soft-label KL term.
    pub tau: f64,
}

impl MethodConfig {
    pub fn baseline() -> Self {
        Self {
            method: Method::Baseline,
            epsilon: 0.0,
            beta: 0.0,
            tau: 1.0,
        }
    }

    pub fn label_smoothing(epsilon: f64) -> Self {
        Self {
            method: Method::Ls,
            epsilon,
            ..Self::baseline()
        }
    }

    pub fn confidence_penalty(beta: f64) -> Self {
        Self {
            method: Method::Cp,
            beta,
            ..Self::baseline()
        }
    }

    pub fn soft_label(beta: f64, tau: f64) -> Self {
        Self {
            method: Method::Ss,
            beta,
            tau,
            ..Self::baseline()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LossError::InvalidConfig(msg));
        match self.method {
            Method::Baseline => Ok(()),
            Method::Ls if !(0.0..1.0).contains(&self.epsilon) => {
                bad(format!("epsilon must lie in [0, 1), got {}", self.epsilon))
            }
            Method::Ls => Ok(()),
            Method::Cp | Method::Ss if !(self.beta > 0.0) => {
                bad(format!("beta must be positive, got {}", self.beta))
            }
            Method::Ss if !(self.tau >= 1.0) => {
                bad(format!("tau must be at least 1, got {}", self.tau))
            }
            Method::Cp | Method::Ss => Ok(()),
        }
    }
}

/// Loss split into its cross-entropy and regulariser parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub ce_part: f64,
    pub reg_part: f64,
}

impl LossValue {
    fn new(ce_part: f64, reg_part: f64) -> Self {
        Self {
            total: ce_part + reg_part,
            ce_part,
            reg_part,
        }
    }
}

/// A loss value and its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: LossValue,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Class(usize),
    Probs(&'a [f64]),
}

fn check_logits(logits: &[f64]) -> Result<()> {
    match logits.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(LossError::NonFiniteLogit(i)),
        None => Ok(()),
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let (arg, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    // the max term contributes exactly 1, so ln_1p keeps precision for confident logits
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != arg)
        .map(|(_, v)| (v - max).exp())
        .sum();
    let log_norm = rest.ln_1p();
    logits.iter().map(|v| (v - max) - log_norm).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    softmax_row(logits)
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `-sum_k t_k log softmax(z)_k`, with gradient `softmax(z) * sum(t) - t`.
pub fn cross_entropy(logits: &[f64], target: Target<'_>) -> Result<LossGrad> {
    check_logits(logits)?;
    let l = logits.len();
    let log_p = log_softmax(logits);
    let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
    match target {
        Target::Class(c) => {
            if c >= l {
                return Err(LossError::ClassOutOfRange {
                    class: c,
                    num_classes: l,
                });
            }
            let mut grad = p;
            grad[c] -= 1.0;
            Ok(LossGrad {
                value: LossValue::new(-log_p[c], 0.0),
                grad,
            })
        }
        Target::Probs(t) => {
            if t.len() != l {
                return Err(LossError::LengthMismatch {
                    found: t.len(),
                    expected: l,
                });
            }
            let mass: f64 = t.iter().sum();
            let loss = -t.iter().zip(&log_p).map(|(ti, lp)| ti * lp).sum::<f64>();
            let grad = p.iter().zip(t).map(|(pi, ti)| pi * mass - ti).collect();
            Ok(LossGrad {
                value: LossValue::new(loss, 0.0),
                grad,
            })
        }
    }
}

/// `(1 - eps) onehot(class) + eps / L`.
pub fn smooth_targets(class: usize, num_classes: usize, epsilon: f64) -> Vec<f64> {
    let off = epsilon / num_classes as f64;
    let mut t = vec![off; num_classes];
    t[class] += 1.0 - epsilon;
    t
}

/// `sum_k p_k ln(p_k / q_k)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(pk, qk)| pk * (pk / qk).ln())
        .sum()
}

/// `KL(softmax(z) || uniform)` and its gradient.
fn confidence_penalty(logits: &[f64]) -> (f64, Vec<f64>) {
    let log_p = log_softmax(logits);
    let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
    let neg_entropy: f64 = p.iter().zip(&log_p).map(|(pi, lp)| pi * lp).sum();
    let value = neg_entropy + (logits.len() as f64).ln();
    let grad = p
        .iter()
        .zip(&log_p)
        .map(|(pi, lp)| pi * (lp - neg_entropy))
        .collect();
    (value, grad)
}

/// Target distribution of the soft-label term: `softmax(a / tau)`.
pub fn softened_target(confidences: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = confidences.iter().map(|a| a / tau).collect();
    softmax_row(&scaled)
}

/// `KL(target || softmax(z / tau))` and its gradient `(softmax(z / tau) - target) / tau`.
fn soft_label_term(logits: &[f64], target: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let scaled: Vec<f64> = logits.iter().map(|z| z / tau).collect();
    let log_q = log_softmax(&scaled);
    let value: f64 = target
        .iter()
        .zip(&log_q)
        .filter(|(&t, _)| t > 0.0)
        .map(|(t, lq)| t * (t.ln() - lq))
        .sum();
    let grad = log_q
        .iter()
        .zip(target)
        .map(|(lq, t)| (lq.exp() - t) / tau)
        .collect();
    (value, grad)
}

/// Loss and logit gradient of one sample under `config`.
pub fn method_loss(
    logits: &[f64],
    hard_label: usize,
    config: &MethodConfig,
    soft_confidences: Option<&[f64]>,
) -> Result<LossGrad> {
    let l = logits.len();
    match config.method {
        Method::Baseline => cross_entropy(logits, Target::Class(hard_label)),
        Method::Ls => {
            if hard_label >= l {
                return Err(LossError::ClassOutOfRange {
                    class: hard_label,
                    num_classes: l,
                });
            }
            let t = smooth_targets(hard_label, l, config.epsilon);
            cross_entropy(logits, Target::Probs(&t))
        }
        Method::Cp => {
            let ce = cross_entropy(logits, Target::Class(hard_label))?;
            let (kl, g) = confidence_penalty(logits);
            Ok(combine(ce, config.beta, kl, &g))
        }
        Method::Ss => {
            let a = soft_confidences.ok_or(LossError::MissingSoftLabels)?;
            if a.len() != l {
                return Err(LossError::LengthMismatch {
                    found: a.len(),
                    expected: l,
                });
            }
            let ce = cross_entropy(logits, Target::Class(hard_label))?;
            let target = softened_target(a, config.tau);
            let (kl, g) = soft_label_term(logits, &target, config.tau);
            Ok(combine(ce, config.beta, kl, &g))
        }
    }
}

fn combine(ce: LossGrad, beta: f64, reg: f64, reg_grad: &[f64]) -> LossGrad {
    let grad = ce
        .grad
        .iter()
        .zip(reg_grad)
        .map(|(a, b)| a + beta * b)
        .collect();
    LossGrad {
        value: LossValue::new(ce.value.ce_part, beta * reg),
        grad,
    }
}

/// Mean loss over a batch and the gradient of that mean, row-major `B x L`.
pub fn batch_loss<'a, F>(
    logits: &[f64],
    num_classes: usize,
    labels: &[usize],
    config: &MethodConfig,
    confidences: F,
) -> Result<(LossValue, Vec<f64>)>
where
    F: Fn(usize) -> Option<&'a [f64]>,
{
    if logits.len() != labels.len() * num_classes {
        return Err(LossError::LengthMismatch {
            found: logits.len(),
            expected: labels.len() * num_classes,
        });
    }
    let b = labels.len() as f64;
    let mut total = LossValue::default();
    let mut grad = Vec::with_capacity(logits.len());
    for (i, (row, &y)) in logits.chunks(num_classes).zip(labels).enumerate() {
        let lg = method_loss(row, y, config, confidences(i))?;
        total.total += lg.value.total / b;
        total.ce_part += lg.value.ce_part / b;
        total.reg_part += lg.value.reg_part / b;
        grad.extend(lg.grad.into_iter().map(|g| g / b));
    }
    Ok((total, grad))
}
