use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("covariance matrix is not positive definite: smallest eigenvalue {eigenvalue:e} (threshold {threshold:e})")]
    NotPositiveDefinite { eigenvalue: f64, threshold: f64 },

    #[error("QP solver did not converge at phi = {phi} after {iterations} iterations")]
    QpNonConvergence { phi: f64, iterations: usize },

    #[error("phi = {phi} outside tabulated range [{min}, {max}]")]
    PhiOutOfRange { phi: f64, min: f64, max: f64 },

    #[error("maximum-principle guard: phi = {value} at node {node}, tau = {tau} outside [{min}, {max}]")]
    MaximumPrinciple {
        value: f64,
        node: usize,
        tau: f64,
        min: f64,
        max: f64,
    },

    #[error("tridiagonal system not diagonally dominant at row {row} (tau = {tau})")]
    NotDiagonallyDominant { row: usize, tau: f64 },

    #[error("non-finite state on path {path} at step {step}: x = {value}")]
    NonFinite { path: usize, step: usize, value: f64 },

    #[error("non-increasing value function at node {node}, layer {layer}: dV/dx = {value:e}")]
    NotIncreasing { node: usize, layer: usize, value: f64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Broad classification used to pick a process exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Parse { .. } | Error::Dimension(_) => {
                ErrorKind::Config
            }
            Error::Io(_) => ErrorKind::Io,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numeric,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Numeric => 3,
            ErrorKind::Io => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
