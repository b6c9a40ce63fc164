//! Experiment harness behind the `risphase` command line.

pub mod artifacts;
pub mod config;
pub mod experiment;

pub use config::{EstimatorKind, ExperimentConfig, Preset, Strategy};
pub use experiment::{results_csv, Experiment, ResultRecord, SearchSummary, RESULT_HEADER};
