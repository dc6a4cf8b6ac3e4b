//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DemvcError {
    /// Shapes of two operands are incompatible. Both shapes are reported.
    #[error("dimension mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Dimension {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    /// A precondition on arguments was violated (bad sizes, missing labels, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// An operation was called in the wrong training phase.
    #[error("phase error: {0}")]
    Phase(String),

    /// A dataset file failed validation on load.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// A numeric evaluation produced a non-finite value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl DemvcError {
    pub fn dimension(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        DemvcError::Dimension {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, DemvcError>;
