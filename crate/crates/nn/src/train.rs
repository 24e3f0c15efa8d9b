//! Mini-batch training of one experiment cell with periodic test evaluation.

use std::time::Instant;

use candle_core::{Tensor, Var};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use softts_core::losses::batch_loss;
use softts_core::results::RunStatus;
use softts_core::{ExperimentResult, LabeledDataset, Method, MethodConfig, SoftLabelMatrix};

use crate::layers::TrainCtx;
use crate::models::{build_model, Classifier, ModelSpec};
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::optimizer")]
    pub optimizer: Optimizer,
    #[serde(default = "defaults::eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn epochs() -> usize {
        1000
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn learning_rate() -> f64 {
        0.001
    }
    pub fn optimizer() -> super::Optimizer {
        super::Optimizer::Adam
    }
    pub fn eval_every() -> usize {
        5
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            learning_rate: defaults::learning_rate(),
            optimizer: Optimizer::Adam,
            eval_every: defaults::eval_every(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_owned()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    /// Epochs at which the test set is evaluated.
    pub fn eval_epochs(&self) -> Vec<usize> {
        (1..=self.epochs).filter(|e| e % self.eval_every == 0).collect()
    }
}

/// Adam without weight decay.
pub struct Adam {
    params: Vec<Var>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    lr: f64,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(params: Vec<Var>, lr: f64) -> Result<Self> {
        let first = params
            .iter()
            .map(|p| p.as_tensor().zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        let second = first.clone();
        Ok(Self {
            params,
            first,
            second,
            lr,
            step: 0,
        })
    }

    pub fn step(&mut self, grads: &candle_core::backprop::GradStore) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for ((p, m), v) in self.params.iter().zip(&mut self.first).zip(&mut self.second) {
            let Some(g) = grads.get(p.as_tensor()) else {
                continue;
            };
            *m = ((&*m * BETA1)? + (g * (1.0 - BETA1))?)?;
            *v = ((&*v * BETA2)? + (g.sqr()? * (1.0 - BETA2))?)?;
            let m_hat = (&*m / c1)?;
            let v_hat = (&*v / c2)?;
            let update = (m_hat / (v_hat.sqrt()? + ADAM_EPS)?)?;
            p.set(&(p.as_tensor() - (update * self.lr)?)?)?;
        }
        Ok(())
    }
}

/// Fraction of rows whose argmax, ties going to the lowest index, equals the label.
pub fn accuracy_from_logits(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .outer_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count();
    correct as f64 / labels.len() as f64
}

pub fn evaluate_accuracy(model: &Classifier, test: &LabeledDataset) -> Result<f64> {
    let (logits, _) = model.forward(&test.samples)?;
    Ok(accuracy_from_logits(&logits, &test.labels))
}

/// A finished cell: its record and the trained classifier.
pub struct Experiment {
    pub result: ExperimentResult,
    pub model: Classifier,
}

fn check_inputs(
    train: &LabeledDataset,
    test: &LabeledDataset,
    spec: &ModelSpec,
    method: &MethodConfig,
    soft: Option<&SoftLabelMatrix>,
) -> Result<()> {
    if train.label_map != test.label_map {
        return Err(NnError::InvalidConfig("train and test splits use different label maps".into()));
    }
    if spec.num_classes != train.num_classes() || spec.input_length != train.series_length() {
        return Err(NnError::InvalidConfig(format!(
            "model built for {} classes of length {}, data has {} of length {}",
            spec.num_classes,
            spec.input_length,
            train.num_classes(),
            train.series_length()
        )));
    }
    method.validate()?;
    if method.method == Method::Ss {
        let soft = soft.ok_or(softts_core::losses::LossError::MissingSoftLabels)?;
        if soft.len() != train.len() || soft.num_classes() != train.num_classes() {
            return Err(NnError::InvalidConfig(format!(
                "soft labels are {}x{}, training split is {}x{}",
                soft.len(),
                soft.num_classes(),
                train.len(),
                train.num_classes()
            )));
        }
    }
    Ok(())
}

/// Trains `spec` on `train` with `method`, evaluating on `test` every
/// `config.eval_every` epochs. A non-finite loss stops training and yields a record with
/// status `diverged` and the trajectory so far.
pub fn run_experiment(
    train: &LabeledDataset,
    test: &LabeledDataset,
    spec: &ModelSpec,
    method: &MethodConfig,
    config: &TrainConfig,
    soft: Option<&SoftLabelMatrix>,
) -> Result<Experiment> {
    config.validate()?;
    spec.validate()?;
    check_inputs(train, test, spec, method, soft)?;
    let started = Instant::now();
    let model = build_model(spec)?;
    let mut optimizer = Adam::new(model.store().trainable(), config.learning_rate)?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_D00D);
    let l = spec.num_classes;
    let n = train.len();
    let confidences = soft.filter(|_| method.method == Method::Ss);

    let mut eval_points = Vec::new();
    let mut failure = None;
    'epochs: for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64)));
        for (batch_no, idx) in order.chunks(config.batch_size).enumerate() {
            let rows = train.samples.select(ndarray::Axis(0), idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let x = model.input_tensor(&rows)?;
            let mut ctx = TrainCtx { rng: &mut dropout_rng };
            let out = model.forward_tensor(&x, Some(&mut ctx))?;
            let logits: Vec<f64> = out
                .logits
                .flatten_all()?
                .to_vec1::<f32>()?
                .into_iter()
                .map(f64::from)
                .collect();
            let step = batch_loss(&logits, l, &labels, method, |i| {
                confidences.map(|s| s.confidence_row(idx[i]))
            });
            let (value, grad) = match step {
                Ok((v, g)) if v.total.is_finite() => (v, g),
                Ok((v, _)) => {
                    failure = Some(format!("non-finite loss {} at epoch {epoch}, batch {batch_no}", v.total));
                    break 'epochs;
                }
                Err(e) => {
                    failure = Some(format!("{e} at epoch {epoch}, batch {batch_no}"));
                    break 'epochs;
                }
            };
            let _ = value;
            // d(sum(logits * G))/d(logits) = G, the analytic loss gradient
            let g = Tensor::from_vec(
                grad.into_iter().map(|v| v as f32).collect::<Vec<_>>(),
                out.logits.dims(),
                out.logits.device(),
            )?;
            let surrogate = (out.logits * g)?.sum_all()?;
            optimizer.step(&surrogate.backward()?)?;
        }
        if epoch % config.eval_every == 0 {
            eval_points.push((epoch, evaluate_accuracy(&model, test)?));
        }
    }

    let best_accuracy = eval_points.iter().map(|p| p.1).fold(0.0, f64::max);
    let result = ExperimentResult {
        dataset: train.name.clone(),
        model: spec.name(),
        depth: spec.inception_depth,
        method: method.method.as_str().to_owned(),
        seed: config.seed,
        gamma: confidences.map_or(0.0, |s| s.gamma),
        beta: method.beta,
        tau: method.tau,
        epsilon: method.epsilon,
        best_accuracy,
        eval_points,
        wall_time: started.elapsed().as_secs_f64(),
        encoder: None,
        status: if failure.is_some() { RunStatus::Diverged } else { RunStatus::Ok },
        message: failure,
    };
    Ok(Experiment { result, model })
}
