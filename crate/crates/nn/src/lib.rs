//! Classifiers and the training loop.
//!
//! Models run in `f32` on the CPU through candle. Loss values and their gradients with
//! respect to the logits come from `softts_core::losses` in `f64`; the gradient is fed
//! back into the network through the surrogate `sum(logits * G)`.

pub mod layers;
pub mod models;
pub mod train;

use thiserror::Error;

pub use models::{build_model, Architecture, Classifier, ModelOutput, ModelSpec, INCEPTION_DEPTHS};
pub use train::{
    accuracy_from_logits, evaluate_accuracy, run_experiment, Experiment, Optimizer, TrainConfig,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("{model} needs series of length at least {minimum}, got {length}")]
    InputTooShort {
        model: String,
        length: usize,
        minimum: usize,
    },
    #[error("batch has series of length {found}, model expects {expected}")]
    LengthMismatch { found: usize, expected: usize },
    #[error("invalid training setup: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Loss(#[from] softts_core::losses::LossError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
