use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("state `{state}`: {message}")]
    StateMismatch { state: String, message: String },

    #[error("duplicate transition label {0}")]
    DuplicateTransition(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("atoms {0} and {1} occupy identical coordinates")]
    CoincidentAtoms(usize, usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("transition {0} has no displacement signal (all feature columns static)")]
    NoDisplacementSignal(String),

    #[error("alignment failed: {0}")]
    Alignment(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("session: {0}")]
    Session(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
