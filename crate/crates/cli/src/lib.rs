//! Building blocks of the `icopro` command: config loading, the HTTP label
//! service and run comparison.

pub mod compare;
pub mod config;
pub mod serve;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The config could not be parsed or failed validation; `location` is the
    /// JSON path of the offending field (`.` for the document itself).
    #[error("invalid config at `{location}`: {message}")]
    Config { location: String, message: String },

    #[error(transparent)]
    Run(#[from] icopro::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
