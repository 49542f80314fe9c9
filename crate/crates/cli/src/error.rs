use std::path::{Path, PathBuf};

use eit_core::error::EitError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },

    #[error("solver failure: {0}")]
    Solver(#[from] EitError),

    #[error("{}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn input(path: &Path, message: impl ToString) -> Self {
        Self::Input {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn output(path: &Path, source: std::io::Error) -> Self {
        Self::Output {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for bad configuration or input files, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Solver(_) => 3,
            Self::Config(_) | Self::Input { .. } | Self::Output { .. } => 2,
        }
    }
}
