use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("endpoint ({x:.3}, {z:.3}) is blocked or outside the navigation grid")]
    UnreachableEndpoint { x: f64, z: f64 },
    #[error("no path between start and goal")]
    NoPath,
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training diverged at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("segment {segment}: {source}")]
    Segment {
        segment: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("scenario {id}: {source}")]
    Scenario {
        id: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Innermost error, skipping segment/scenario context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Segment { source, .. } | Error::Scenario { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::NoPath | Error::UnreachableEndpoint { .. } => 3,
            Error::Numeric(_) | Error::Training { .. } => 4,
            _ => 2,
        }
    }
}
