use std::path::PathBuf;

use thiserror::Error;

use crate::run::RunRecord;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] perturbopt_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    /// Malformed file contents.
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    /// Training produced a non-finite loss or weight. The partial record
    /// covers every iteration up to `last_finite`.
    #[error("numeric divergence at iteration {iteration} (last finite iteration {last_finite})")]
    Divergence { iteration: usize, last_finite: usize, record: Box<RunRecord> },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// Process exit code: 2 for divergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Divergence { .. }
            | HarnessError::Core(perturbopt_core::Error::Divergence { .. }) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        HarnessError::Format { path: path.into(), message: message.into() }
    }
}
