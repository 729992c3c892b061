use std::path::{Path, PathBuf};

use planshape_core::trainer::TrainError;
use planshape_core::world::WorldError;
use thiserror::Error;

use crate::trajectory_log::LogError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Data { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Log {
        path: PathBuf,
        #[source]
        source: LogError,
    },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn data(path: &Path, message: impl Into<String>) -> Self {
        Error::Data { path: path.to_path_buf(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::World(WorldError::Config(_)) => exit::USAGE,
            Error::Train(TrainError::NumericalAbort { .. }) => exit::NUMERICAL,
            Error::Train(TrainError::Config(_)) => exit::USAGE,
            _ => exit::DATA,
        }
    }
}
