//! Configuration-driven experiment runner for the `fluxlod` schemes.
//!
//! A run reads one JSON document listing experiments (`evolve`, `sweep`,
//! `convergence`, `stability`), executes them concurrently and writes one
//! directory of CSV files per experiment plus a `run.json` manifest.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;

pub use config::RunConfig;
pub use error::CliError;
pub use output::{emit_csv, CsvRecord};
pub use runner::{run, run_config, run_config_file, run_experiment, RunOptions};
