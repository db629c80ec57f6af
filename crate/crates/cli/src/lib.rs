//! Experiment runner: JSON configs in, loss tables and plot-ready CSV out.

pub mod config;
pub mod losses;
pub mod run;
pub mod trace;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid config, or a bad command-line value.
    #[error("{location}: {message}")]
    Config { location: String, message: String },
    /// An input file does not match the expected CSV schema.
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Schema { .. } => 1,
            CliError::Runtime(_) | CliError::Io { .. } => 2,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
