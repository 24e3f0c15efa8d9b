//! Core building blocks for soft-label time series classification experiments.
//!
//! The crate is organised along the experiment pipeline:
//!
//! * [`dataset`] reads UCR-2018 formatted archives and prepares fixed-length series.
//! * [`representation`] turns series into per-sample vectors (precomputed files, a
//!   random-convolution encoder, or the raw series themselves).
//! * [`softlabel`] builds soft labels from average distances between a sample and
//!   every foreign class in representation space.
//! * [`losses`] implements cross-entropy, label smoothing, confidence penalty and the
//!   representation soft-label objective together with their logit gradients.
//! * [`results`] holds the per-experiment record and its JSON-lines store.
//! * [`reporting`] aggregates result records into tables, rank statistics, t-SNE maps
//!   and SVG figures.
//! * [`synthetic`] regenerates a handful of synthetic UCR problems for offline use.

pub mod dataset;
pub mod losses;
pub mod reporting;
pub mod representation;
pub mod results;
pub mod softlabel;
pub mod synthetic;

pub use dataset::{LabelMap, LabeledDataset, RawRecord, Split};
pub use losses::{LossValue, Method, MethodConfig};
pub use representation::{EncoderKind, EncoderSpec, Pooling, RepresentationMatrix};
pub use results::{ExperimentResult, ResultsStore};
pub use softlabel::{ClassDistanceTable, SoftLabelConfig, SoftLabelMatrix};
