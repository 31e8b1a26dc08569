//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParamDomain(String),

    #[error("autodiff: node id {0} does not belong to this tape")]
    DanglingNode(usize),

    #[error("newton-raphson failed at step {step}: residual {residual:.3e} after {iters} iterations")]
    NrDiverged { step: usize, iters: u32, residual: f64 },

    #[error("training aborted: {0}")]
    Training(String),

    #[error("{path}:{line}: {msg}")]
    CurveParse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
