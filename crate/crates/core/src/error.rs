//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/matrix dimension mismatch; the message names both shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A hyperparameter or argument outside its valid range.
    #[error("invalid parameter: {0}")]
    Param(String),
    /// Bad input data (empty corpus, NaN entries, mismatched line counts, ...).
    #[error("invalid input: {0}")]
    Input(String),
    /// A file did not follow its declared format.
    #[error("format error: {0}")]
    Format(String),
    /// A token or key was required but absent.
    #[error("lookup failed: {0}")]
    Lookup(String),
    /// Optimizer or model state is inconsistent (e.g. missing gradient).
    #[error("invalid state: {0}")]
    State(String),
    /// Configuration is internally inconsistent or references unknown keys.
    #[error("configuration error: {0}")]
    Config(String),
    /// A function evaluation produced a non-finite value.
    #[error("evaluation error: {0}")]
    Eval(String),
    /// Checkpoint or file version is not supported.
    #[error("version mismatch: found {found}, expected {expected}")]
    Version { found: String, expected: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Format error carrying a 1-based line number.
    pub fn format_at(line: usize, msg: impl Into<String>) -> Self {
        Error::Format(format!("line {}: {}", line, msg.into()))
    }
}
