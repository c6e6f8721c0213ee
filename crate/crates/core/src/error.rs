use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A linear system could not be solved; carries the offending condition.
    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver failure: {0}")]
    Convergence(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// An internal consistency check failed (a computed quantity that must be
    /// nonnegative came out clearly negative, and so on).
    #[error("numerical inconsistency: {0}")]
    Numerical(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
