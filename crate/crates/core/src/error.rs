use std::path::PathBuf;

use smokesal_tensor::TensorError;

/// Broad failure class, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or configuration.
    Usage,
    /// Missing, corrupt or inconsistent input data.
    Data,
    /// Numerical failure: non-finite values, solver divergence.
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{0}")]
    Invalid(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Numerical(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Tensor(TensorError::NonFinite { .. })
            | Error::Tensor(TensorError::NonFiniteGradient { .. })
            | Error::Numerical(_)
            | Error::NoConvergence { .. } => ErrorKind::Numerical,
            Error::Tensor(TensorError::Io(_) | TensorError::Snapshot(_))
            | Error::Data { .. }
            | Error::Io { .. } => ErrorKind::Data,
            Error::Tensor(_) | Error::Invalid(_) | Error::Config(_) => ErrorKind::Usage,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
