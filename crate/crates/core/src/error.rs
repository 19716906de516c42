use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A file did not conform to its interchange format.
    #[error("malformed field `{field}`: {reason}")]
    Format { field: String, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error line and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Format { .. } => "format",
            Error::Validation(_) => "validation",
            Error::DegenerateCalibration(_) => "degenerate_calibration",
            Error::Io { .. } => "io",
            Error::Internal(_) => "internal",
        }
    }
}
