use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum P2sError {
    /// A configuration value violates its invariant.
    #[error("configuration error: {0}")]
    Config(String),
    /// An argument is outside the operation's domain (unknown token, empty input, ...).
    #[error("input error: {0}")]
    Input(String),
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// The operation is undefined for the given state (for instance PFR without a gold-CoT).
    #[error("domain error: {0}")]
    Domain(String),
    /// Training produced a non-finite quantity.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, P2sError>;
