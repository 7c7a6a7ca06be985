//! Command-line driver: dataset and truth I/O, fit orchestration, evaluation.

pub mod commands;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod manifest;
pub mod output;

pub use error::{CliError, Result};
