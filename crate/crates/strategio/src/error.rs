//! Error type shared across the crate.

/// Crate-wide error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input shapes or values violate a documented precondition.
    #[error("validation: {0}")]
    Validation(String),
    /// A numeric routine failed to converge or hit a degenerate system.
    #[error("solver: {0}")]
    Solver(String),
    /// Filesystem failure while reading or writing an artifact.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed CSV input.
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    /// Malformed JSON input.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
