//! Error taxonomy shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Array/grid shape mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// NaN or infinity where finite data is required.
    #[error("non-finite data: {0}")]
    Data(String),

    /// Input outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally invalid argument (ordering, emptiness, out of range).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The grid is too coarse for the requested operation.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// An internal cross-check failed (should not happen on valid inputs).
    #[error("internal consistency error: {0}")]
    Internal(String),

    /// Configuration file problems.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
