use alloc::string::String;

/// Errors reported by the numerics crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("layout mismatch: expected dimension {expected}, found {found}")]
    LayoutMismatch { expected: usize, found: usize },
    #[error("zero direction vector")]
    ZeroVector,
    #[error("operation requires a classification head")]
    NotClassification,
    #[error("theorem hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("non-finite value at iteration {iteration}")]
    Divergence { iteration: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
