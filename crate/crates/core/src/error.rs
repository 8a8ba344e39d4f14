use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("force norm {norm:e} N is too small to define a line of action")]
    DegenerateWrench { norm: f64 },

    #[error("x = {x} m is outside the tool domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("line of action does not intersect the tool surface")]
    NoIntersection,

    #[error("normal matrix is singular; need more non-parallel wrenches or a positive regularizer")]
    SingularNormalMatrix,

    #[error("proposal covariance is not positive definite after repair")]
    CovarianceNotSpd,

    #[error("no grid column overlaps the tool domain")]
    NoOverlap,

    #[error("series length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: row {row}: {msg}")]
    Data { path: PathBuf, row: usize, msg: String },

    #[error("malformed grid snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
