use std::path::PathBuf;

use crate::model::{Heading, StateId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("action {action} is not feasible at state {state} slot {slot}")]
    InfeasibleAction {
        state: StateId,
        slot: usize,
        action: Heading,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("solver failure: {0}")]
    Solver(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 1 for solver
    /// failures, 2 for configuration and I/O problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Solver(_) | Error::InvalidModel(_) | Error::InfeasibleAction { .. } => 1,
            _ => 2,
        }
    }
}
