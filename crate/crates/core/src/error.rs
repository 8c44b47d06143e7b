use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid bounds: lo must be strictly below hi in every component")]
    InvalidBounds,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate range: all values are equal ({0})")]
    DegenerateRange(f64),

    #[error("utility domain error: shifted utility {0} is not positive")]
    Domain(f64),

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("unknown user type {0:?}")]
    UnknownUserType(String),

    #[error("no records for base station {0:?}")]
    NoRecords(String),

    #[error("instance too large for the exhaustive oracle: {0}")]
    SizeGuard(String),

    #[error("undefined baseline: {0} must be positive")]
    UndefinedBaseline(f64),

    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),
}

impl Error {
    /// True for errors caused by input data rather than parameters.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MalformedRow { .. }
                | Error::UnknownUserType(_)
                | Error::NoRecords(_)
                | Error::DegenerateRange(_)
        )
    }
}
