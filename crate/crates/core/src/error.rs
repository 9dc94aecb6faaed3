use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix data has {got} entries, expected {expected}")]
    InvalidData { expected: usize, got: usize },

    #[error("matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    NoConvergence { iterations: usize, estimate: f64 },

    #[error("matrix is numerically singular (smallest singular value {sigma_min:e})")]
    NearSingular { sigma_min: f64 },

    /// The ISTA step-size condition `tau * ||A||^2 <= 1` is violated.
    #[error("step size violates tau*||A||^2 <= 1: tau = {tau}, ||A|| = {norm}")]
    StepSize { tau: f64, norm: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("IDX format error: {0}")]
    Format(String),

    #[error("file {path} is truncated: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("training diverged at epoch {epoch}: loss {loss:e} exceeds 1e6 x initial loss {initial:e}")]
    Divergence { epoch: usize, loss: f64, initial: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
