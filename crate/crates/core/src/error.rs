use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The CLI maps errors for which [`Error::is_validation`] holds to exit
/// code 2 and everything else to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a structural requirement (ordering, shape, labels).
    #[error("structural error: {0}")]
    Structure(String),

    /// A function argument is outside its domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A model constraint is violated, e.g. a restaurant probability outside [0, 1].
    #[error("constraint violated: {0}")]
    Constraint(String),

    /// A configuration or input file failed validation.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A distribution cannot be sampled as requested.
    #[error("unsatisfiable: {0}")]
    Unsatisfiable(String),

    /// The sampler reached a non-finite or otherwise broken state.
    #[error("sampler failure at iteration {iteration}: {message}")]
    Sampler { iteration: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input, including a missing input
    /// file, rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Validation(_) | Error::Structure(_) | Error::Argument(_) | Error::Parse { .. } => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
