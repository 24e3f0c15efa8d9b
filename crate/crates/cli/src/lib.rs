//! Experiment driver: plans, the encode / labels / train / report pipeline and the
//! `softts` command line.

pub mod commands;
pub mod plan;
pub mod runner;

pub use plan::{load_plan, parse_plan, ExperimentPlan, Layout, MethodEntry, ModelEntry, ModelPreset};
pub use runner::{Cell, Pipeline, ReportSummary, TrainSummary};
