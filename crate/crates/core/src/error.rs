//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// `Config` covers invalid parameters supplied by the caller, `Data` covers
/// inputs that are structurally valid but unusable (wrong shape, degenerate
/// values), `Parse` carries file/line context for ingestion failures, and
/// `Experiment` flags evaluation-protocol conditions (e.g. no eligible
/// region for a randomized control draw) that skip a sample rather than
/// abort a run.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied input or configuration
    /// (as opposed to internal failures). CLIs map these to exit code 2.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Data(_) | Error::Parse { .. } | Error::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
