//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or inconsistent input data (bad records, dangling
    /// references, empty splits, hash mismatches).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration value or unknown configuration key.
    #[error("config error: {0}")]
    Config(String),

    /// A numeric contract was violated (non-finite loss, failed gradient
    /// check, dimension mismatch).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Lookup of a node that does not exist in the graph. Distinct from an
    /// empty neighbor list.
    #[error("unknown node: {0}")]
    UnknownNode(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
