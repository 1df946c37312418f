use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed IDX or model container bytes.
    #[error("format error: {0}")]
    Format(String),
    /// Mismatched lengths, counts or indices.
    #[error("shape error: {0}")]
    Shape(String),
    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),
    /// Non-finite values or a failed numerical routine.
    #[error("numerics error: {0}")]
    Numerics(String),
    /// Statistic undefined for the given input (zero variance, too few samples).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    /// An error annotated with the model or stage it came from.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) => 2,
            Error::Format(_) | Error::Shape(_) | Error::Io { .. } => 3,
            Error::Numerics(_) | Error::DegenerateInput(_) => 4,
            Error::Context { .. } => unreachable!("root() strips context"),
        }
    }
}
