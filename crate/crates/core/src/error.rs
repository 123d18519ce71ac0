use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Transport,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown document `{doc_id}` (line {line})")]
    UnknownDocument { doc_id: String, line: usize },

    #[error("duplicate node id `{node_id}` on lines {first} and {second}")]
    DuplicateNode {
        node_id: String,
        first: usize,
        second: usize,
    },

    #[error("invalid node id `{0}`")]
    InvalidNodeId(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("missing rank for `{node_id}` in view `{view}`")]
    MissingRank { node_id: String, view: String },

    #[error("transport: {0}")]
    Transport(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Transport(_) => ErrorClass::Transport,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
