use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failures of a command-line run, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("solver error: {0}")]
    Solver(#[from] nsk_core::Error),

    /// The run finished and wrote its report, but some solve did not converge.
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Solver(nsk_core::Error::InvalidParams(_) | nsk_core::Error::InvalidMesh(_)) => 2,
            Self::Solver(_) | Self::Diverged(_) => 3,
            Self::Io { .. } => 4,
        }
    }
}
