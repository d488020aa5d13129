use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors raised anywhere in the registration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("incompatible checkpoint: {0}")]
    Compat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes format errors with the file they came from.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            Error::Format { offset, msg } => Error::Format {
                offset,
                msg: format!("{}: {msg}", path.display()),
            },
            Error::Csv(e) => Error::Format {
                offset: e.position().map_or(0, |p| p.byte()),
                msg: format!("{}: {e}", path.display()),
            },
            other => other,
        }
    }

    /// Process exit code for this error class: 2 config, 3 format/I-O, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format { .. } | Error::Compat(_) | Error::Io { .. } | Error::Csv(_) => 3,
            Error::Numeric(_) => 4,
            // Shape and state errors come from inconsistent inputs.
            Error::Shape(_) | Error::State(_) => 2,
        }
    }
}
