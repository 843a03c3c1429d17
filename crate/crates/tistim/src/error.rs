//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad inputs: violated preconditions, inconsistent configuration.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Mesh-level defects (degenerate elements, bad indices, empty patches).
    #[error("mesh error: {0}")]
    Mesh(String),

    /// Tissue table lookups that cannot be satisfied.
    #[error("tissue table error: {0}")]
    Tissue(String),

    /// Iterative solver did not reach the requested tolerance.
    #[error("pcg did not converge: {iterations} iterations, residual {residual:.3e} (target {target:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        target: f64,
    },

    /// Dense factorization failure (singular operator).
    #[error("singular system: {0}")]
    Singular(String),

    /// Mixing products computed at different base points.
    #[error("base point mismatch: {0}")]
    BasePointMismatch(String),

    /// File format violations when reading meshes, tables or products.
    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn mesh(msg: impl Into<String>) -> Self {
        Error::Mesh(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Mesh(_) | Error::Tissue(_) | Error::Parse { .. } => 2,
            Error::NonConvergence { .. } | Error::Singular(_) | Error::BasePointMismatch(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}
