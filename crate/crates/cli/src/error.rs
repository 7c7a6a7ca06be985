use std::path::PathBuf;
use thiserror::Error;
use zinmf_core::evaluate::EvaluateError;
use zinmf_core::gibbs::SamplerError;
use zinmf_core::model::Violation;
use zinmf_core::simulate::SimulationError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Data(String),
    #[error("dataset failed validation:\n{}", list(.0))]
    InvalidDataset(Vec<Violation>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Evaluate(#[from] EvaluateError),
}

fn list(violations: &[Violation]) -> String {
    violations.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n")
}

impl CliError {
    /// 0 success, 1 data or validation failure, 2 usage or config error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Csv { path, source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
