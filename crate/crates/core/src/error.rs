use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the decoding pipeline.
///
/// The variants fall into three families that the command-line front end maps
/// onto distinct exit codes: configuration, data, and numeric degeneracy.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    ConfigFields(Vec<String>),

    #[error("{what} index {index} out of range (len {len})")]
    OutOfBounds {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("missing input file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("numeric degeneracy: {0}")]
    Degenerate(String),

    #[error("fold {fold} (held-out subject {subject}): {source}")]
    Fold {
        fold: usize,
        subject: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error family, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::ConfigFields(_) => ErrorKind::Config,
            Error::Degenerate(_) => ErrorKind::Numeric,
            Error::Fold { source, .. } => source.kind(),
            Error::OutOfBounds { .. }
            | Error::Data(_)
            | Error::MissingFile(_)
            | Error::Format { .. }
            | Error::Io(_) => ErrorKind::Data,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
