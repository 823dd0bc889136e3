//! Experiment plumbing around `mcmab-core`: TOML configs, a parallel
//! replication runner, verification suites and regret reports.

pub mod config;
pub mod report;
pub mod runner;
pub mod verify;

use thiserror::Error;

/// Failures surfaced by the CLI, split by exit code.
#[derive(Debug, Error)]
pub enum BenchError {
    /// Bad flags or configuration (exit code 2).
    #[error("{0}")]
    Usage(String),
    /// A run or verification failed (exit code 1).
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] mcmab_core::Error),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
