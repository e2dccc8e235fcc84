use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability vector: {0}")]
    InvalidPmf(String),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("degenerate variance: all replicates are identical")]
    DegenerateVariance,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the caller's configuration or inputs rather
    /// than by a failure during computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Json(_)
                | Error::InvalidPmf(_)
                | Error::InvalidCounts(_)
                | Error::Argument(_)
                | Error::Domain(_)
        )
    }
}
