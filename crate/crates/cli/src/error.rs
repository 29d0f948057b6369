use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use text2action::checkpoint::CheckpointError;
use text2action::data::DataError;
use text2action::embedding::EmbeddingError;
use text2action::training::TrainError;
use text2action::ModelError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("numeric failure: {what}; state dumped to {dump}")]
    Numeric { what: String, dump: PathBuf },
}

impl CliError {
    /// 1 for input and config errors, 2 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric { .. } => 2,
            _ => 1,
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Dimension { .. } | CheckpointError::Shape { .. } | CheckpointError::Missing(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(msg) => CliError::Config(msg),
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
