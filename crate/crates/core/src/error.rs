use thiserror::Error;

/// Errors raised by the solver, data ingestion and model I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("bad cell at row {row}, column '{column}': {message}")]
    BadCell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("model file: {0}")]
    Model(String),

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Short stable tag used in the CLI's machine-readable error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::BadCell { .. } => "bad-cell",
            Error::Model(_) => "model",
            Error::Config(_) => "config",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
