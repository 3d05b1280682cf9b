use thiserror::Error;

/// Errors raised by the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical integration did not converge on [{lo}, {hi}]: achieved error {achieved:e}, requested {requested:e}")]
    Quadrature {
        lo: f64,
        hi: f64,
        achieved: f64,
        requested: f64,
    },

    #[error("truncation tail {tail:e} exceeds tolerance {tol:e} at support size {support}; raise the support cap")]
    Truncation { tail: f64, tol: f64, support: usize },

    #[error("degenerate parameter: {0}")]
    Degenerate(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
