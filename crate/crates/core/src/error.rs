//! Library-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("block structure mismatch: {0}")]
    StructureMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing head gradient for objective {0}")]
    MissingHeadGradient(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 config/usage, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::EmptyInput(_)
            | Error::DimensionMismatch(_)
            | Error::StructureMismatch(_)
            | Error::MissingData(_)
            | Error::MissingHeadGradient(_) => 1,
            Error::NonFinite(_) | Error::Numerical(_) => 2,
            Error::Io(_) | Error::Json(_) => 3,
        }
    }
}
