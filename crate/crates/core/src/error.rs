use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("quadrature did not converge (error estimate {error:e}, tolerance {tol:e})")]
    Quadrature { error: f64, tol: f64 },

    #[error("both two-photon amplitudes vanish at t1={t1} ns, t2={t2} ns")]
    UnreachableSample { t1: f64, t2: f64 },

    #[error("event stream not sorted: record {index} has timestamp {timestamp} < {previous}")]
    Unsorted {
        index: usize,
        timestamp: u64,
        previous: u64,
    },

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
