//! Datasets, experiment runner, file formats and command-line front end for
//! the `perturbopt-core` optimizers and diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use run::{run_experiment, run_experiment_with, RunOptions, RunRecord};
pub use sweep::{sweep, SweepConfig};
