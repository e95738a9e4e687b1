//! Seeded, reproducible experiment runner on top of `kbflow-core`.
//!
//! Each experiment reads an [`ExperimentConfig`], fans independent replicas
//! out to a worker pool, collects them in replica order and returns a
//! [`RunRecord`] with long-format metric rows and a list of checked
//! criteria.

pub mod config;
pub mod experiments;
pub mod record;

pub use config::{Experiment, ExperimentConfig};
pub use experiments::{run_experiment, run_experiment_with_workers};
pub use record::{Criterion, MetricRow, RunRecord};
