//! Error type shared by the whole crate, with a stable mapping from error
//! class to process exit code.

use std::path::Path;

/// Crate-wide error. Every variant maps to exactly one CLI exit code:
/// configuration and format problems exit 1, numeric failures exit 2,
/// filesystem problems exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration field holds an unusable value.
    #[error("invalid value for `{field}`: {message}")]
    Config { field: String, message: String },

    /// Two objects that must share a dimension do not.
    #[error("dimension mismatch: {context} ({left} vs {right})")]
    DimensionMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    /// A binary embedding archive violates the format contract.
    #[error("{path}: invalid archive: {detail} at byte offset {offset}")]
    ArchiveFormat {
        path: String,
        offset: u64,
        detail: String,
    },

    /// Any other unusable input (unknown ids, out-of-range arguments, ...).
    #[error("invalid input: {0}")]
    Validation(String),

    /// A computation produced or met a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Filesystem failure, tagged with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn dim_mismatch(context: &str, left: usize, right: usize) -> Self {
        Error::DimensionMismatch {
            context: context.to_string(),
            left,
            right,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code for this error class: 1 validation, 2 numeric, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::DimensionMismatch { .. }
            | Error::ArchiveFormat { .. }
            | Error::Validation(_) => 1,
            Error::Numeric(_) => 2,
            Error::Io { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
