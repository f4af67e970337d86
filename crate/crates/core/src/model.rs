//! Domain types shared by every routing component: models, score matrices,
//! batch and allocation instances, and the solutions produced for them.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Absolute tolerance applied to every money comparison (dollars per query).
pub const COST_TOLERANCE: f64 = 1e-9;

/// `true` when a batch whose queries cost `total_cost` dollars in sum stays
/// within the per-query average budget.
pub fn within_budget(total_cost: f64, n_queries: usize, budget: f64) -> bool {
    if budget.is_infinite() {
        return true;
    }
    total_cost / n_queries as f64 <= budget + COST_TOLERANCE
}

/// One candidate model.
///
/// `gpus_per_instance == 0` marks a cloud model: it has no allocation variable
/// and unbounded capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    /// Dollars per query.
    pub cost: f64,
    #[serde(rename = "gpus")]
    pub gpus_per_instance: u32,
    /// Concurrent queries one instance can serve.
    pub concurrency: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<u32>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, cost: f64, gpus_per_instance: u32, concurrency: u32) -> Self {
        Self { name: name.into(), cost, gpus_per_instance, concurrency, instances: None }
    }

    /// A model served by an external provider.
    pub fn cloud(name: impl Into<String>, cost: f64) -> Self {
        Self::new(name, cost, 0, 1)
    }

    pub fn with_instances(mut self, instances: u32) -> Self {
        self.instances = Some(instances);
        self
    }

    pub fn is_cloud(&self) -> bool {
        self.gpus_per_instance == 0
    }

    /// Queries the model may serve in one batch: `concurrency * instances`, or
    /// unbounded for cloud models. A self-hosted model without an instance
    /// count has no capacity.
    pub fn capacity(&self) -> Capacity {
        if self.is_cloud() {
            Capacity::Unbounded
        } else {
            Capacity::Finite(u64::from(self.concurrency) * u64::from(self.instances.unwrap_or(0)))
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.name.is_empty() {
            return Err(ModelError::InvalidModel { name: self.name.clone(), reason: "empty name".into() });
        }
        if !(self.cost >= 0.0) || !self.cost.is_finite() {
            return Err(ModelError::InvalidModel {
                name: self.name.clone(),
                reason: format!("cost must be finite and >= 0, got {}", self.cost),
            });
        }
        if self.concurrency == 0 {
            return Err(ModelError::InvalidModel {
                name: self.name.clone(),
                reason: "concurrency must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Per-model, per-batch capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Capacity {
    Finite(u64),
    Unbounded,
}

impl Capacity {
    /// Capacity clamped to `n`, which is all a batch of `n` queries can use.
    pub fn clamp_to(self, n: usize) -> usize {
        match self {
            Capacity::Finite(c) => c.min(n as u64) as usize,
            Capacity::Unbounded => n,
        }
    }

    pub fn admits(self, load: usize) -> bool {
        match self {
            Capacity::Finite(c) => load as u64 <= c,
            Capacity::Unbounded => true,
        }
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capacity::Finite(c) => write!(f, "{c}"),
            Capacity::Unbounded => f.write_str("inf"),
        }
    }
}

/// A query record as loaded from a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub id: String,
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub true_scores: Option<Vec<f64>>,
    /// Evaluation-only per-query cost component (e.g. input tokens).
    #[serde(default)]
    pub input_cost_weight: Option<f64>,
}

/// Estimated performance of each model on each query, row-major, every value
/// in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScoreMatrix")]
pub struct ScoreMatrix {
    rows: Vec<String>,
    cols: Vec<String>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawScoreMatrix {
    rows: Vec<String>,
    cols: Vec<String>,
    values: Vec<f64>,
}

impl TryFrom<RawScoreMatrix> for ScoreMatrix {
    type Error = ModelError;

    fn try_from(raw: RawScoreMatrix) -> Result<Self, Self::Error> {
        ScoreMatrix::new(raw.rows, raw.cols, raw.values)
    }
}

fn check_unique(labels: &[String], axis: &'static str) -> Result<(), ModelError> {
    let mut seen = HashSet::with_capacity(labels.len());
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(ModelError::DuplicateLabel { axis, label: l.clone() });
        }
    }
    Ok(())
}

impl ScoreMatrix {
    pub fn new(rows: Vec<String>, cols: Vec<String>, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != rows.len() * cols.len() {
            return Err(ModelError::Shape { expected: rows.len() * cols.len(), found: values.len() });
        }
        check_unique(&rows, "row")?;
        check_unique(&cols, "column")?;
        let m = cols.len();
        for (idx, &v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(ModelError::ScoreOutOfRange {
                    row: rows[idx / m].clone(),
                    col: cols[idx % m].clone(),
                    value: v,
                });
            }
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a matrix from nested rows with generated labels `q1..qN` and
    /// `m1..mM`. Convenient for tests and examples.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(ModelError::Ragged);
        }
        let labels = (1..=rows.len()).map(|i| format!("q{i}")).collect();
        let cols = (1..=m).map(|j| format!("m{j}")).collect();
        Self::new(labels, cols, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[String] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.cols.len();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.rows.iter().position(|r| r == id)
    }

    /// Sub-matrix over the given row indices, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> ScoreMatrix {
        let rows = idx.iter().map(|&i| self.rows[i].clone()).collect();
        let values = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        ScoreMatrix { rows, cols: self.cols.clone(), values }
    }

    pub fn same_labels(&self, other: &ScoreMatrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// Prediction bounds `[lower, upper]` for every (query, model) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntervalMatrix")]
pub struct IntervalMatrix {
    lower: ScoreMatrix,
    upper: ScoreMatrix,
}

#[derive(Deserialize)]
struct RawIntervalMatrix {
    lower: ScoreMatrix,
    upper: ScoreMatrix,
}

impl TryFrom<RawIntervalMatrix> for IntervalMatrix {
    type Error = ModelError;

    fn try_from(raw: RawIntervalMatrix) -> Result<Self, Self::Error> {
        IntervalMatrix::new(raw.lower, raw.upper)
    }
}

impl IntervalMatrix {
    pub fn new(lower: ScoreMatrix, upper: ScoreMatrix) -> Result<Self, ModelError> {
        if lower.cols != upper.cols {
            let missing = lower
                .cols
                .iter()
                .chain(upper.cols.iter())
                .find(|c| !lower.cols.contains(c) || !upper.cols.contains(c))
                .cloned()
                .unwrap_or_default();
            return Err(ModelError::LabelMismatch { what: "model columns", detail: missing });
        }
        if lower.rows != upper.rows {
            return Err(ModelError::LabelMismatch { what: "query rows", detail: String::new() });
        }
        let m = lower.n_cols();
        for (idx, (lo, hi)) in lower.values.iter().zip(&upper.values).enumerate() {
            if lo > hi {
                return Err(ModelError::InvertedInterval {
                    row: lower.rows[idx / m].clone(),
                    col: lower.cols[idx % m].clone(),
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Degenerate intervals around point estimates.
    pub fn degenerate(point: ScoreMatrix) -> Self {
        Self { lower: point.clone(), upper: point }
    }

    pub fn lower(&self) -> &ScoreMatrix {
        &self.lower
    }

    pub fn upper(&self) -> &ScoreMatrix {
        &self.upper
    }

    pub fn length(&self, i: usize, j: usize) -> f64 {
        self.upper.get(i, j) - self.lower.get(i, j)
    }
}

/// One batch-routing instance: `N` queries, `M` models, an average budget
/// per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchProblem {
    pub scores: ScoreMatrix,
    pub models: Vec<ModelSpec>,
    /// Dollars per query, averaged over the batch. May be `f64::INFINITY`.
    pub budget: f64,
}

impl BatchProblem {
    pub fn new(scores: ScoreMatrix, models: Vec<ModelSpec>, budget: f64) -> Self {
        Self { scores, models, budget }
    }

    pub fn n_queries(&self) -> usize {
        self.scores.n_rows()
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn capacities(&self) -> Vec<Capacity> {
        self.models.iter().map(ModelSpec::capacity).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.cost).collect()
    }

    /// Estimated objective (mean score) and average cost of an assignment.
    pub fn evaluate(&self, assignment: &[usize]) -> (f64, f64) {
        let n = assignment.len() as f64;
        let mut score = 0.0;
        let mut cost = 0.0;
        for (i, &j) in assignment.iter().enumerate() {
            score += self.scores.get(i, j);
            cost += self.models[j].cost;
        }
        (score / n, cost / n)
    }
}

/// A single problem with a batch instance, reported by [`validate_problem`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyBatch,
    NoModels,
    InvalidBudget(f64),
    InvalidModel(String),
    ColumnMismatch { expected: Vec<String>, found: Vec<String> },
    InsufficientCapacity { total: u64, needed: usize },
    BudgetBelowCheapest { budget: f64, cheapest: f64 },
    WrongLength { expected: usize, found: usize },
    UnknownModel { query: usize, model: usize },
    OverBudget { avg_cost: f64, budget: f64 },
    OverCapacity { model: String, load: usize, capacity: Capacity },
    NegativeGap(f64),
}

impl Violation {
    /// Structural infeasibility: no assignment can satisfy the instance.
    pub fn is_infeasibility(&self) -> bool {
        matches!(self, Violation::InsufficientCapacity { .. } | Violation::BudgetBelowCheapest { .. })
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyBatch => f.write_str("batch has no queries"),
            Violation::NoModels => f.write_str("no models"),
            Violation::InvalidBudget(b) => write!(f, "budget must be >= 0, got {b}"),
            Violation::InvalidModel(why) => write!(f, "invalid model: {why}"),
            Violation::ColumnMismatch { expected, found } => {
                write!(f, "score columns {found:?} do not match model names {expected:?}")
            }
            Violation::InsufficientCapacity { total, needed } => {
                write!(f, "insufficient capacity: {total} slots for {needed} queries")
            }
            Violation::BudgetBelowCheapest { budget, cheapest } => {
                write!(f, "budget below cheapest feasible: {budget} < {cheapest}")
            }
            Violation::WrongLength { expected, found } => {
                write!(f, "assignment has {found} entries, expected {expected}")
            }
            Violation::UnknownModel { query, model } => write!(f, "query {query} assigned to unknown model {model}"),
            Violation::OverBudget { avg_cost, budget } => {
                write!(f, "average cost {avg_cost} exceeds budget {budget}")
            }
            Violation::OverCapacity { model, load, capacity } => {
                write!(f, "model {model} serves {load} queries, capacity {capacity}")
            }
            Violation::NegativeGap(g) => write!(f, "negative optimality gap {g}"),
        }
    }
}

/// Checks a batch instance; an empty report means the instance is well formed
/// and passes the cheap feasibility prechecks.
pub fn validate_problem(p: &BatchProblem) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = p.n_queries();
    if n == 0 {
        out.push(Violation::EmptyBatch);
    }
    if p.models.is_empty() {
        out.push(Violation::NoModels);
    }
    if !(p.budget >= 0.0) {
        out.push(Violation::InvalidBudget(p.budget));
    }
    for m in &p.models {
        if let Err(e) = m.validate() {
            out.push(Violation::InvalidModel(e.to_string()));
        }
    }
    let names: Vec<String> = p.models.iter().map(|m| m.name.clone()).collect();
    if names != p.scores.cols() {
        out.push(Violation::ColumnMismatch { expected: names, found: p.scores.cols().to_vec() });
    }
    if n == 0 || p.models.is_empty() {
        return out;
    }

    let caps = p.capacities();
    if !caps.contains(&Capacity::Unbounded) {
        let total: u64 = caps
            .iter()
            .map(|c| match c {
                Capacity::Finite(c) => *c,
                Capacity::Unbounded => 0,
            })
            .sum();
        if total < n as u64 {
            out.push(Violation::InsufficientCapacity { total, needed: n });
        }
    }
    let cheapest = p
        .models
        .iter()
        .zip(&caps)
        .filter(|(_, c)| **c != Capacity::Finite(0))
        .map(|(m, _)| m.cost)
        .fold(f64::INFINITY, f64::min);
    if cheapest.is_finite() && p.budget >= 0.0 && p.budget + COST_TOLERANCE < cheapest {
        out.push(Violation::BudgetBelowCheapest { budget: p.budget, cheapest });
    }
    out
}

/// Checks an assignment against the assignment, budget and capacity
/// constraints of `p`.
pub fn validate_assignment(p: &BatchProblem, assignment: &[usize]) -> Vec<Violation> {
    let mut out = Vec::new();
    if assignment.len() != p.n_queries() {
        out.push(Violation::WrongLength { expected: p.n_queries(), found: assignment.len() });
        return out;
    }
    let mut load = vec![0usize; p.n_models()];
    let mut total_cost = 0.0;
    for (i, &j) in assignment.iter().enumerate() {
        if j >= p.n_models() {
            out.push(Violation::UnknownModel { query: i, model: j });
            continue;
        }
        load[j] += 1;
        total_cost += p.models[j].cost;
    }
    if !within_budget(total_cost, p.n_queries(), p.budget) {
        out.push(Violation::OverBudget { avg_cost: total_cost / p.n_queries() as f64, budget: p.budget });
    }
    for (m, (&l, cap)) in p.models.iter().zip(load.iter().zip(p.capacities())) {
        if !cap.admits(l) {
            out.push(Violation::OverCapacity { model: m.name.clone(), load: l, capacity: cap });
        }
    }
    out
}

/// [`validate_assignment`] plus the certificate checks on a solver output.
/// Fallback solutions are exempt from the budget check.
pub fn validate_solution(p: &BatchProblem, sol: &RoutingSolution) -> Vec<Violation> {
    let mut out = validate_assignment(p, &sol.assignment);
    if sol.status == SolveStatus::Fallback {
        out.retain(|v| !matches!(v, Violation::OverBudget { .. }));
    }
    if sol.status.is_solved() && sol.gap < -1e-9 {
        out.push(Violation::NegativeGap(sol.gap));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Certified optimal within the gap tolerance.
    Optimal,
    /// A limit was hit; `gap` holds the achieved certificate.
    GapCertified,
    /// No assignment satisfies the constraints.
    Infeasible,
    /// The budget could not be met; the cheapest capacity-feasible assignment
    /// was returned instead.
    Fallback,
}

impl SolveStatus {
    pub fn is_solved(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::GapCertified)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapCertified => "gap_certified",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Fallback => "fallback",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Assignment of every query in a batch to one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingSolution {
    /// Model index per query. Empty when infeasible.
    pub assignment: Vec<usize>,
    /// Mean estimated score of the assignment.
    pub objective: f64,
    pub realized_avg_cost: f64,
    /// Valid upper bound on the optimal objective.
    pub bound: f64,
    pub gap: f64,
    pub status: SolveStatus,
}

impl RoutingSolution {
    pub fn infeasible() -> Self {
        Self {
            assignment: Vec::new(),
            objective: f64::NEG_INFINITY,
            realized_avg_cost: f64::NAN,
            bound: f64::NEG_INFINITY,
            gap: 0.0,
            status: SolveStatus::Infeasible,
        }
    }

    /// One-hot form: `x[i][j] == 1` iff query `i` goes to model `j`.
    pub fn one_hot(&self, n_models: usize) -> Vec<Vec<u8>> {
        self.assignment
            .iter()
            .map(|&j| {
                let mut row = vec![0u8; n_models];
                row[j] = 1;
                row
            })
            .collect()
    }

    pub fn loads(&self, n_models: usize) -> Vec<usize> {
        let mut load = vec![0; n_models];
        for &j in &self.assignment {
            load[j] += 1;
        }
        load
    }
}

/// Offline instance allocation over `B` calibration batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    /// Calibration batches; all share the model columns and the row count.
    pub batches: Vec<ScoreMatrix>,
    /// Models; any `instances` field is ignored.
    pub models: Vec<ModelSpec>,
    pub gpu_budget: u64,
    /// Dollars per query, averaged over all calibration queries.
    pub budget: f64,
}

impl AllocationProblem {
    pub fn validate(&self) -> Result<(), ModelError> {
        let first = self.batches.first().ok_or(ModelError::EmptyCalibration)?;
        let names: Vec<String> = self.models.iter().map(|m| m.name.clone()).collect();
        for m in &self.models {
            m.validate()?;
        }
        if names != first.cols() {
            return Err(ModelError::LabelMismatch { what: "model columns", detail: format!("{:?}", first.cols()) });
        }
        if first.n_rows() == 0 {
            return Err(ModelError::EmptyCalibration);
        }
        for b in &self.batches[1..] {
            if b.cols() != first.cols() {
                return Err(ModelError::LabelMismatch { what: "model columns", detail: format!("{:?}", b.cols()) });
            }
            if b.n_rows() != first.n_rows() {
                return Err(ModelError::Shape { expected: first.n_rows(), found: b.n_rows() });
            }
        }
        if !(self.budget >= 0.0) {
            return Err(ModelError::InvalidBudget(self.budget));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.batches.first().map_or(0, ScoreMatrix::n_rows)
    }
}

/// Assignment of one calibration batch inside an allocation solve. The cost
/// constraint is shared across batches, so a single batch may exceed the
/// average budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub assignment: Vec<usize>,
    pub objective: f64,
    pub realized_avg_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    /// Instances per model; `None` for cloud models, which are not allocated.
    pub instances: Vec<Option<u32>>,
    /// Mean estimated score over all calibration queries.
    pub objective: f64,
    pub bound: f64,
    pub status: SolveStatus,
    pub per_batch: Vec<BatchRecord>,
}

impl AllocationSolution {
    pub fn gpus_used(&self, models: &[ModelSpec]) -> u64 {
        self.instances.iter().zip(models).map(|(i, m)| u64::from(i.unwrap_or(0)) * u64::from(m.gpus_per_instance)).sum()
    }

    /// Models with the chosen instance counts filled in.
    pub fn apply(&self, models: &[ModelSpec]) -> Vec<ModelSpec> {
        models.iter().zip(&self.instances).map(|(m, i)| ModelSpec { instances: *i, ..m.clone() }).collect()
    }

    pub fn mean_cost(&self) -> f64 {
        let b = self.per_batch.len() as f64;
        self.per_batch.iter().map(|r| r.realized_avg_cost).sum::<f64>() / b
    }
}

/// Tie-break rule for per-query routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Lower cost first, then lower model index.
    #[default]
    CheapestThenIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouterParams {
    /// Weight on cost in the per-query utility `score - lambda * cost`.
    pub lambda: f64,
    #[serde(default)]
    pub tie_break: TieBreak,
}

impl RouterParams {
    pub fn new(lambda: f64) -> Result<Self, ModelError> {
        if !(lambda >= 0.0) {
            return Err(ModelError::InvalidLambda(lambda));
        }
        Ok(Self { lambda, tie_break: TieBreak::default() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_models(c: [f64; 2], caps: [u32; 2]) -> Vec<ModelSpec> {
        vec![
            ModelSpec::new("m1", c[0], 1, 1).with_instances(caps[0]),
            ModelSpec::new("m2", c[1], 1, 1).with_instances(caps[1]),
        ]
    }

    #[test]
    fn pigeonhole_capacity_violation() {
        let scores = ScoreMatrix::from_rows(&[vec![0.5], vec![0.5]]).unwrap();
        let p = BatchProblem::new(scores, vec![ModelSpec::new("m1", 1.0, 1, 1).with_instances(1)], 10.0);
        let report = validate_problem(&p);
        assert_eq!(report, vec![Violation::InsufficientCapacity { total: 1, needed: 2 }]);
        assert!(report[0].to_string().contains("insufficient capacity"));
    }

    #[test]
    fn zero_budget_with_positive_costs() {
        let scores = ScoreMatrix::from_rows(&[vec![0.5, 0.4]]).unwrap();
        let p = BatchProblem::new(scores, two_models([1.0, 2.0], [5, 5]), 0.0);
        let report = validate_problem(&p);
        assert_eq!(report.len(), 1);
        assert!(report[0].to_string().contains("budget below cheapest feasible"));
    }

    #[test]
    fn well_formed_instance_is_clean() {
        let scores = ScoreMatrix::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]]).unwrap();
        let p = BatchProblem::new(scores, two_models([1.0, 2.0], [2, 2]), 1.0);
        assert!(validate_problem(&p).is_empty());
    }

    #[test]
    fn cloud_models_are_unbounded() {
        let m = ModelSpec::cloud("api", 0.01);
        assert_eq!(m.capacity(), Capacity::Unbounded);
        assert_eq!(ModelSpec::new("local", 0.0, 2, 4).capacity(), Capacity::Finite(0));
        assert_eq!(ModelSpec::new("local", 0.0, 2, 4).with_instances(3).capacity(), Capacity::Finite(12));
    }

    #[test]
    fn scores_out_of_range_are_rejected() {
        let err = ScoreMatrix::from_rows(&[vec![0.1, 1.5]]).unwrap_err();
        assert!(matches!(err, ModelError::ScoreOutOfRange { ref col, .. } if col == "m2"));
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let err = ScoreMatrix::new(vec!["a".into(), "a".into()], vec!["m".into()], vec![0.1, 0.2]).unwrap_err();
        assert!(matches!(err, ModelError::DuplicateLabel { .. }));
    }

    #[test]
    fn interval_requires_ordered_bounds() {
        let lo = ScoreMatrix::from_rows(&[vec![0.5]]).unwrap();
        let hi = ScoreMatrix::from_rows(&[vec![0.4]]).unwrap();
        assert!(IntervalMatrix::new(lo, hi).is_err());
    }

    #[test]
    fn assignment_checks() {
        let scores = ScoreMatrix::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let p = BatchProblem::new(scores, two_models([1.0, 3.0], [1, 2]), 2.0);
        assert!(validate_assignment(&p, &[0, 1]).is_empty());
        let v = validate_assignment(&p, &[0, 0]);
        assert!(matches!(v[..], [Violation::OverCapacity { load: 2, .. }]));
        let v = validate_assignment(&p, &[1, 1]);
        assert!(matches!(v[..], [Violation::OverBudget { .. }]));
    }

    #[test]
    fn serde_round_trip_rejects_bad_scores() {
        let s = r#"{"rows":["a"],"cols":["m"],"values":[2.0]}"#;
        assert!(serde_json::from_str::<ScoreMatrix>(s).is_err());
    }
}
