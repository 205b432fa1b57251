use thiserror::Error;

/// Errors produced by the calibration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (bad files, non-finite values,
    /// mismatched dimensions between artifacts).
    #[error("data error: {0}")]
    Data(String),

    /// An argument violates a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A fit produced a non-finite loss or gradient.
    #[error("numeric failure at epoch {epoch}: {message}")]
    NumericFailure { epoch: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
