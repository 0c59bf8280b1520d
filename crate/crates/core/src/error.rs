//! Error type shared by every module of the crate.

use std::fmt;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric domain error: {0}")]
    Numeric(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    Vocab { id: usize, size: usize },

    #[error("sequence length {len} exceeds context length {max_seq}")]
    ContextOverflow { len: usize, max_seq: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("backward pass requested without a cached forward pass")]
    MissingForwardCache,

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("generation produced no content after parsing")]
    EmptyGeneration,

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(what: impl fmt::Display) -> Self {
        Error::Shape(what.to_string())
    }

    pub(crate) fn config(what: impl fmt::Display) -> Self {
        Error::InvalidConfig(what.to_string())
    }

    pub(crate) fn input(what: impl fmt::Display) -> Self {
        Error::InvalidInput(what.to_string())
    }
}
