use thiserror::Error;

/// Errors raised anywhere in the modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error for claim '{claim_id}': {message}")]
    Validation { claim_id: String, message: String },

    #[error("range error: {0}")]
    Range(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("numerical error: {message} (achieved tolerance {achieved:e})")]
    Numerical { message: String, achieved: f64 },

    #[error("majorant violation at t = {t}: intensity {value} exceeds bound {bound}")]
    MajorantViolation { t: f64, value: f64, bound: f64 },

    #[error("replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>, achieved: f64) -> Self {
        Error::Numerical {
            message: message.into(),
            achieved,
        }
    }

    /// True for failures that originate in numerics rather than in the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical { .. } | Error::MajorantViolation { .. } => true,
            Error::Replicate { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
