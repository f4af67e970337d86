use thiserror::Error;

use crate::model::Violation;

/// Errors raised when constructing domain values.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("rows have different lengths")]
    Ragged,
    #[error("duplicate {axis} label {label:?}")]
    DuplicateLabel { axis: &'static str, label: String },
    #[error("score {value} at ({row}, {col}) is outside [0, 1]")]
    ScoreOutOfRange { row: String, col: String, value: f64 },
    #[error("lower bound exceeds upper bound at ({row}, {col})")]
    InvertedInterval { row: String, col: String },
    #[error("{what} differ between matrices: {detail}")]
    LabelMismatch { what: &'static str, detail: String },
    #[error("model {name:?}: {reason}")]
    InvalidModel { name: String, reason: String },
    #[error("lambda must be >= 0, got {0}")]
    InvalidLambda(f64),
    #[error("budget must be >= 0, got {0}")]
    InvalidBudget(f64),
    #[error("no calibration queries")]
    EmptyCalibration,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k = {k} exceeds the {n} training queries")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be >= 1")]
    ZeroK,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training scores have {scores} rows but there are {embeddings} embeddings")]
    RowCountMismatch { embeddings: usize, scores: usize },
    #[error("embedding {row} has zero norm or non-finite entries")]
    DegenerateEmbedding { row: usize },
    #[error("bootstrap needs at least 2 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("quantile must lie in (0, 100), got {0}")]
    InvalidQuantile(f64),
    #[error("pick vectors cover {robust} and {point} queries")]
    PickLengthMismatch { point: usize, robust: usize },
    #[error("pick {pick} of query {query} is not a model index")]
    PickOutOfRange { query: usize, pick: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelaxError {
    #[error("relaxation is infeasible")]
    Infeasible,
    #[error("numerical failure in relaxation: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("invalid problem: {}", join(.0))]
    InvalidProblem(Vec<Violation>),
    #[error("{limit} limit reached before a feasible assignment was found")]
    LimitReached { limit: &'static str },
    #[error("instance too large for exhaustive search: {0} assignments")]
    TooLarge(f64),
    #[error(transparent)]
    Relax(#[from] RelaxError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no instance allocation within the GPU budget admits a feasible routing")]
    Infeasible,
    #[error("uniform allocation of {n} instances needs {needed} GPUs, budget is {budget}")]
    GpuBudgetExceeded { n: u32, needed: u64, budget: u64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// File and schema errors, with the location of the offending cell.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Model { path: String, source: ModelError },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
