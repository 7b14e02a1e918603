use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("catalog error: {0}")]
    Catalog(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("singular normal equations; collinear predictor(s): {}", columns.join(", "))]
    Singular { columns: Vec<String> },

    #[error("statistical failure: {0}")]
    Statistical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the model itself (singularity, non-convergence)
    /// rather than of inputs or configuration.
    pub fn is_statistical(&self) -> bool {
        matches!(self, Error::Singular { .. } | Error::Statistical(_))
    }
}
