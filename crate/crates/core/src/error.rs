use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("normal undefined at degenerate point {point:?}")]
    DegeneratePoint { point: Vec<f64> },

    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("driver evaluation failed at {point}: {reason}")]
    Evaluation { point: String, reason: String },

    #[error("tail integral diverges: {0}")]
    Divergence(String),

    #[error("no contraction: constant {best} >= {threshold} on [0, {t_max}]")]
    ContractionInfeasible {
        best: f64,
        threshold: f64,
        t_max: f64,
    },

    #[error("probability measure error at node {node}: children sum to {sum}")]
    Measure { node: usize, sum: f64 },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("driver regime error: {0}")]
    Regime(String),

    #[error("regression basis error at step {step}: {reason}")]
    Basis { step: usize, reason: String },

    #[error("driver stiffness at step {step}: {reason}")]
    DriverStiffness { step: usize, reason: String },

    #[error("exponential weight overflow (exponent {exponent:.1}); try smaller lambda or mu")]
    Overflow { exponent: f64 },

    #[error("stopping rule error: {0}")]
    Rule(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("ellipticity error: {0}")]
    Ellipticity(String),

    #[error("no convergence after {iterations} iterations (last residual {last_residual:e})")]
    NonConvergence {
        iterations: usize,
        last_residual: f64,
        trace: Vec<f64>,
    },

    #[error("scalar Newton failed at node {node}: {reason}")]
    NodeSolve { node: usize, reason: String },

    #[error("serialization: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
