use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible shapes: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("diverged: {0}")]
    Divergence(String),

    #[error("no training data")]
    NoTrainingData,

    #[error("empty evaluation set: {0}")]
    EmptyEvaluation(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("check failed: {0}")]
    Check(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_)
            | Error::Config(_)
            | Error::NoTrainingData
            | Error::EmptyEvaluation(_)
            | Error::Parse { .. }
            | Error::Check(_)
            | Error::Checkpoint(_) => 1,
            Error::Divergence(_) => 2,
            Error::Io { .. } => 3,
        }
    }
}
