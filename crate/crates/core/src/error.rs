use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("metric is not symmetric positive definite at {at:?}")]
    DegenerateMetric { at: Vec<f64> },

    #[error("weight gradient vanishes at {at:?}")]
    ZeroGradient { at: Vec<f64> },

    #[error("weight exponent overflow: tau * spread(phi) = {exponent:.3e} exceeds 650")]
    WeightOverflow { exponent: f64 },

    #[error("no mu <= {mu_max} certifies; best c0 trace {trace:?}")]
    SearchExhausted { mu_max: f64, trace: Vec<(f64, f64)> },

    #[error("tau sweep never plateaued: {0}")]
    PlateauNotFound(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("degenerate solution: {0}")]
    DegenerateSolution(String),

    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
