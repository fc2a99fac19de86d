use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the style augmentation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical routine failed (non-finite values, factorization failure).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A configuration file or value failed validation.
    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config {
        line: Option<usize>,
        message: String,
    },

    /// A weight archive, corpus or distribution file is malformed.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A named tensor inside a weight archive is missing or malformed.
    #[error("tensor `{name}` in {path}: {message}")]
    Tensor {
        path: PathBuf,
        name: String,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub fn config(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: msg.into(),
        }
    }

    /// True for errors caused by bad user input or configuration, as opposed
    /// to failures while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::Config { .. })
    }

    /// Prefixes the message with `ctx`, keeping the error kind.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            Error::InvalidInput(m) => Error::InvalidInput(format!("{ctx}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
            Error::Config { line, message } => Error::Config {
                line,
                message: format!("{ctx}: {message}"),
            },
            Error::Format { path, message } => Error::Format {
                path,
                message: format!("{ctx}: {message}"),
            },
            Error::Tensor {
                path,
                name,
                message,
            } => Error::Tensor {
                path,
                name,
                message: format!("{ctx}: {message}"),
            },
            other => Error::Numeric(format!("{ctx}: {other}")),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
