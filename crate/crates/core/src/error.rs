use thiserror::Error;

/// Errors raised across the training stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or mismatched shapes.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was invoked out of its contract (e.g. stepping a finished episode).
    #[error("usage error: {0}")]
    Usage(String),

    /// A non-finite value was produced or consumed.
    #[error("numerical error at parameter {index}: {detail}")]
    Numerical { index: usize, detail: String },

    /// Malformed serialized data.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn usage_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
