//! Config-driven experiment runner for `sddekit`.
//!
//! A run reads one TOML config, dispatches on its `kind`, and writes a single
//! CSV file. See the repository README for the config schema.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod runner;
pub mod table;

pub use config::{load, ExperimentConfig, Kind};
pub use error::{CliError, Result};
pub use runner::{execute, list_models, render, run_file, Overrides};
pub use table::{body, Cell, Table};
