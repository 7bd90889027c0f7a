//! Experiment front end for `sacnf-core`: configuration files, checkpoints,
//! metric and trajectory exports, the seeded multi-run runner and the policy
//! diagnostics report.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod metrics;
pub mod report;
pub mod runner;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use error::Error;
pub use runner::{run_experiment, run_seed, RunArtifacts, RunOutcome};
