//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("model build error: {0}")]
    Build(String),

    #[error("malformed model document: {0}")]
    Document(String),

    #[error("value {value} for `{name}` violates bounds [{lower}, {upper}]")]
    BoundViolation {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("metrics input error: {0}")]
    Metrics(String),

    #[error("LP solve failed: {0}")]
    Numerical(String),

    #[error("simplex iteration limit reached after {0} iterations")]
    IterationLimit(usize),

    #[error("problem is not well-formed: {0}")]
    InvalidProblem(String),

    #[error("solution has no value for variable `{0}`")]
    MissingValue(String),

    #[error("solution is not usable for extraction: status {0}")]
    NotFeasible(String),

    #[error("external solver executable not found: {0}")]
    MissingExecutable(String),

    #[error("external solver exited with {code}: {stderr}")]
    ExternalFailure { code: String, stderr: String },

    #[error("could not parse external solver output: {0}")]
    UnparsableOutput(String),

    #[error("fixation set does not match phase {0}")]
    PhaseMismatch(String),

    #[error("local search failed: all {restarts} restarts were infeasible")]
    AllRestartsInfeasible { restarts: usize },

    #[error("unsupported uncertainty norm: {0}")]
    UnsupportedNorm(String),

    #[error("robust master problem error: {0}")]
    Robust(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("data file error: {0}")]
    DataFile(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
