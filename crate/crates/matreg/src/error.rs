//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix is not symmetric (max asymmetry {max_asym:.3e})")]
    NotSymmetric { max_asym: f64 },

    #[error("matrix is not positive definite in {context}")]
    NotPositiveDefinite { context: &'static str },

    #[error("invalid semi-orthogonal basis: {0}")]
    InvalidBasis(String),

    #[error("dimension must be positive, got {0}")]
    NonPositiveDimension(i64),

    #[error("envelope dimension out of range: u={u} not in 0..={max}")]
    DimensionOutOfRange { u: usize, max: usize },

    #[error(
        "sample size n={n} violates the estimability condition \
         n >= max(r/m, m/r, p1/min(p2,m), p2/min(p1,r)) = {required:.3}"
    )]
    SampleTooSmall { n: usize, required: f64 },

    #[error("singular {which} encountered in flip-flop step (iteration {iteration})")]
    SingularStep { which: &'static str, iteration: usize },

    #[error("singular design or residual covariance in vectorized model: {0}")]
    SingularDesign(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sparse fit infeasible: {0}")]
    InfeasibleSparsity(String),

    #[error("fit failed in {context}: {message}")]
    FitFailed { context: &'static str, message: String },

    #[error("bootstrap exceeded retry budget: {failures} replicate fits failed")]
    BootstrapRetryBudget { failures: usize },

    #[error("p-value out of [0,1]: {0}")]
    PValueOutOfRange(f64),

    #[error("dataset cell missing: unit={unit} block={block} row={row} col={col}")]
    MissingCell {
        unit: usize,
        block: String,
        row: usize,
        col: usize,
    },

    #[error("dataset cell duplicated: unit={unit} block={block} row={row} col={col}")]
    DuplicateCell {
        unit: usize,
        block: String,
        row: usize,
        col: usize,
    },

    #[error("dataset parse error at line {line}: {message}")]
    DatasetParse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
