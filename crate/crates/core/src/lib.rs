//! Batch-level routing of LLM queries under a monetary budget and per-model
//! capacity limits.
//!
//! The crate covers the whole offline and online pipeline:
//!
//! * [`estimator`]: kNN score estimates over query embeddings, bootstrap
//!   ensembles and their quantile bounds, and prediction-interval risk
//!   reports.
//! * [`router`]: the per-query baseline, the exact batch solver
//!   (branch-and-bound over [`relax`]), robust routing on lower bounds, and
//!   an exhaustive oracle.
//! * [`alloc`]: offline choice of instance counts for self-hosted models
//!   under a GPU budget.
//! * [`simkit`]: batch construction, sweeps and metric reports.
//! * [`io`]: the file formats read and written by the command-line tool.

pub mod alloc;
pub mod error;
pub mod estimator;
pub mod io;
pub mod model;
pub mod relax;
pub mod router;
pub mod simkit;

pub use error::{AllocError, EstimatorError, IoError, ModelError, RelaxError, SolveError};
pub use model::{
    validate_assignment, validate_problem, validate_solution, AllocationProblem, AllocationSolution, BatchProblem,
    BatchRecord, Capacity, IntervalMatrix, ModelSpec, QuerySpec, RouterParams, RoutingSolution, ScoreMatrix,
    SolveStatus, TieBreak, Violation, COST_TOLERANCE,
};
