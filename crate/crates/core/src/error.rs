use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid fractal spec: {0}")]
    InvalidSpec(String),

    #[error("level-{level} graph needs at least {needed} vertices, budget is {budget}")]
    ResourceLimit {
        level: usize,
        needed: usize,
        budget: usize,
    },

    #[error("level mismatch: expected {expected}, got {found}")]
    LevelMismatch { expected: usize, found: usize },

    #[error("length mismatch: expected {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("empty boundary set: the Dirichlet problem is singular")]
    EmptyBoundary,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("unsupported fractal `{0}` for this operation")]
    Unsupported(String),

    #[error("requested {requested} eigenpairs but the problem has dimension {dimension}")]
    TooManyEigenpairs { requested: usize, dimension: usize },

    #[error("exponent p = {0} is outside the admissible range")]
    InvalidExponent(f64),

    #[error("incompatible data: {0}")]
    Incompatible(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("time step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("field is not cell-wise: {0}")]
    NotCellwise(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
