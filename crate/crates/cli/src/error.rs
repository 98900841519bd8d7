use std::io;
use std::path::{Path, PathBuf};

use pfsim_core::{ScenarioError, SimError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("grid: {0}")]
    Grid(String),
    #[error("bad seed range `{0}`: expected `a..b` or `a..=b`")]
    Seeds(String),
    #[error("{}: {reason}", path.display())]
    Artifact { path: PathBuf, reason: String },
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        CliError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn artifact(path: impl AsRef<Path>, reason: impl Into<String>) -> Self {
        CliError::Artifact { path: path.as_ref().to_path_buf(), reason: reason.into() }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
