use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error in {path}: {msg}")]
    Input { path: PathBuf, msg: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for anything the user can fix in the config or inputs, 3 for
    /// numerical breakdowns.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => 3,
            _ => 2,
        }
    }
}

impl From<otrf_core::Error> for CliError {
    fn from(e: otrf_core::Error) -> Self {
        use otrf_core::Error as E;
        match e {
            E::NotPositiveDefinite { .. }
            | E::SeriesNotConverged { .. }
            | E::Overflow(_)
            | E::NonFinite(_)
            | E::NotConverged { .. } => CliError::Numeric(e.to_string()),
            E::Io(io) => CliError::Io(io),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
