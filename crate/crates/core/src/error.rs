use std::path::PathBuf;

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("world generation failed: {0}")]
    Generation(String),
    #[error("episode sampling failed: {0}")]
    Sampling(String),
    #[error("no feasible path: {0}")]
    Infeasible(String),
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("malformed {what} at {path}: {msg}")]
    Format { what: &'static str, path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(what: &'static str, path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { what, path: path.into(), msg: msg.into() }
    }

    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerics(NumericsError::Config(_)) => 2,
            Error::MissingPrerequisite(_) => 3,
            Error::Numerical(_) | Error::Numerics(NumericsError::NonFinite { .. }) => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
