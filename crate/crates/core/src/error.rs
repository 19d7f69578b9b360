use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{0}")]
    Invariant(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub fn invariant(msg: impl Into<String>) -> Self {
        ModelError::Invariant(msg.into())
    }

    pub fn schema(path: &Path, message: String) -> Self {
        ModelError::Schema {
            path: path.display().to_string(),
            message,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Failure of a clearing or MPEC solve.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("program is infeasible; violated rows: {}", .rows.join(", "))]
    Infeasible { rows: Vec<String> },
    #[error("solver stopped without convergence ({status})")]
    NotConverged { status: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}
