//! Experiment harness for the `mldlmc` engine: TOML run configuration,
//! experiment suites and CSV output. The `mldlmc` binary is a thin front end
//! over [`commands`].

pub mod commands;
pub mod config;
pub mod experiments;
pub mod output;

pub use config::RunConfig;
