//! Predicting ALSFRS-R sub-score progression from clinical visits and
//! wearable sensor series.
//!
//! The pipeline runs `ingest -> sync -> augment -> featurize -> harness`,
//! with [`solver`] providing the regularized regression and [`synth`] a
//! seeded cohort generator for end-to-end checks.

pub mod augment;
pub mod cli;
pub mod config;
pub mod error;
pub mod featurize;
pub mod harness;
pub mod ingest;
pub mod kv;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod solver;
pub mod stats;
pub mod synth;
pub mod sync;
pub mod types;

pub use error::{Error, Result};
pub use metrics::{compute_metrics, postprocess, MetricMode, MetricReport};
pub use types::{QuestionId, Score, ScorePoint, Source, VisitRecord};
