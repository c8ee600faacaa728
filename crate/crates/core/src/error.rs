use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the admissible region.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration is inconsistent or incomplete.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data (fields, grids) is malformed for the requested operation.
    #[error("input error: {0}")]
    Input(String),

    /// The requested backend does not support this operation.
    #[error("unsupported backend: {0}")]
    UnsupportedBackend(String),

    /// A scaling root could not be bracketed.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A quadrature or fit did not reach the required accuracy.
    #[error("accuracy error: {0}")]
    Accuracy(String),

    /// Not enough tail nodes above the noise floor for a decay fit.
    #[error("insufficient tail: {0}")]
    InsufficientTail(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
