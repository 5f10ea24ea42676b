use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numeric failure at {context}: {detail}")]
    NumericFailure { context: String, detail: String },

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("config error at `{field}`: {detail}")]
    Config { field: String, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NumericFailure {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            detail: detail.into(),
        }
    }

    /// Prefixes the context of a numeric failure, leaving other variants untouched.
    pub fn with_context(self, outer: impl AsRef<str>) -> Self {
        match self {
            Error::NumericFailure { context, detail } => Error::NumericFailure {
                context: format!("{}: {}", outer.as_ref(), context),
                detail,
            },
            other => other,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::DegenerateInput(_)
            | Error::UnsupportedSize(_)
            | Error::Config { .. } => 2,
            Error::Format { .. } | Error::Io { .. } => 3,
            Error::NumericFailure { .. } => 4,
        }
    }
}
