//! Batch construction, routing sweeps and metric reports.
//!
//! A [`BatchPlan`] splits a query set into batches, either uniformly at
//! random or adversarially (queries whose per-query pick is most expensive
//! first, so that costly queries share batches). [`sweep_per_query`] replays
//! the per-query router over a plan, [`run_batch_experiment`] the exact batch
//! solver, and [`full_pipeline`] chains instance allocation on a calibration
//! split with online routing on the rest.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::solve_allocation;
use crate::error::AllocError;
use crate::model::{
    AllocationProblem, AllocationSolution, BatchProblem, ModelSpec, RouterParams, ScoreMatrix, SolveStatus,
};
use crate::router::{route_per_query, solve_batch, SolverOptions};

/// How a plan's batches were formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Random,
    Adversarial,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Random => "random",
            Scheme::Adversarial => "adversarial",
        }
    }
}

/// An ordered partition of a query set into batches of at most
/// `batch_size` queries. Batches hold row positions in the query list the
/// plan was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
    pub scheme: Scheme,
    pub batch_size: usize,
    /// Shuffle seed; `None` for adversarial plans, which are not random.
    pub seed: Option<u64>,
}

impl BatchPlan {
    pub fn n_queries(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    /// Query ids of batch `b`.
    pub fn ids<'a>(&self, b: usize, query_ids: &'a [String]) -> Vec<&'a str> {
        self.batches[b].iter().map(|&i| query_ids[i].as_str()).collect()
    }
}

fn chunked(order: Vec<usize>, batch_size: usize) -> Vec<Vec<usize>> {
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Shuffles the queries with a ChaCha8 generator seeded by `seed`, then cuts
/// consecutive batches of `batch_size` (the last one may be short).
pub fn make_random_batches(query_ids: &[String], batch_size: usize, seed: u64) -> BatchPlan {
    let mut order: Vec<usize> = (0..query_ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    BatchPlan { batches: chunked(order, batch_size), scheme: Scheme::Random, batch_size, seed: Some(seed) }
}

/// Sorts queries by `per_query_costs` descending (ties keep list order) and
/// cuts consecutive batches, concentrating the most expensive queries.
///
/// # Panics
/// If `per_query_costs` and `query_ids` differ in length.
pub fn make_adversarial_batches(query_ids: &[String], batch_size: usize, per_query_costs: &[f64]) -> BatchPlan {
    assert_eq!(query_ids.len(), per_query_costs.len(), "one cost per query");
    let mut order: Vec<usize> = (0..query_ids.len()).collect();
    order.sort_by(|&a, &b| per_query_costs[b].total_cmp(&per_query_costs[a]).then(a.cmp(&b)));
    BatchPlan { batches: chunked(order, batch_size), scheme: Scheme::Adversarial, batch_size, seed: None }
}

/// Cost of each query's per-query pick at `lambda`, the sort key of
/// adversarial batching.
pub fn pick_costs(scores: &ScoreMatrix, models: &[ModelSpec], lambda: f64) -> Vec<f64> {
    let params = RouterParams { lambda, tie_break: Default::default() };
    route_per_query(scores, models, &params).into_iter().map(|j| models[j].cost).collect()
}

/// Outcome of routing one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStatus {
    /// Routed query by query; no optimization involved.
    PerQuery,
    Optimal,
    GapCertified,
    Infeasible,
    Fallback,
    /// The solver failed; the sweep carried on.
    Error,
}

impl BatchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BatchStatus::PerQuery => "per_query",
            BatchStatus::Optimal => "optimal",
            BatchStatus::GapCertified => "gap_certified",
            BatchStatus::Infeasible => "infeasible",
            BatchStatus::Fallback => "fallback",
            BatchStatus::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::PerQuery, Self::Optimal, Self::GapCertified, Self::Infeasible, Self::Fallback, Self::Error]
            .into_iter()
            .find(|v| v.as_str() == s)
    }
}

impl From<SolveStatus> for BatchStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Optimal => BatchStatus::Optimal,
            SolveStatus::GapCertified => BatchStatus::GapCertified,
            SolveStatus::Infeasible => BatchStatus::Infeasible,
            SolveStatus::Fallback => BatchStatus::Fallback,
        }
    }
}

/// One row of a [`MetricsReport`]. Score and cost fields are absent when the
/// batch has no assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub batch_index: usize,
    pub size: usize,
    pub status: BatchStatus,
    /// Mean estimated score of the assignment.
    pub objective_est: Option<f64>,
    /// Mean true score of the assignment, when truth is known.
    pub performance_true: Option<f64>,
    /// Mean cost per query.
    pub avg_cost: Option<f64>,
    pub wall_time_s: f64,
}

/// Aggregates over the batches that received an assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// Query-weighted mean of true scores, or of estimates without truth.
    pub mean_performance: f64,
    /// Largest per-batch average cost.
    pub max_batch_cost: f64,
    /// Total spend over all routed queries.
    pub total_cost: f64,
    /// Population variance of the per-batch average costs.
    pub cost_variance: f64,
    /// Batches without an assignment.
    pub unrouted_batches: usize,
}

impl Aggregates {
    pub fn cost_std(&self) -> f64 {
        self.cost_variance.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_batch: Vec<BatchMetrics>,
    pub aggregates: Aggregates,
}

impl MetricsReport {
    /// Builds a report, computing the aggregates from the rows.
    pub fn from_batches(per_batch: Vec<BatchMetrics>) -> Self {
        let aggregates = aggregate(&per_batch);
        Self { per_batch, aggregates }
    }
}

fn aggregate(rows: &[BatchMetrics]) -> Aggregates {
    let routed: Vec<&BatchMetrics> = rows.iter().filter(|r| r.avg_cost.is_some()).collect();
    let queries: usize = routed.iter().map(|r| r.size).sum();
    let perf = |r: &BatchMetrics| r.performance_true.or(r.objective_est).unwrap_or(0.0);
    let mean_performance =
        if queries == 0 { 0.0 } else { routed.iter().map(|r| perf(r) * r.size as f64).sum::<f64>() / queries as f64 };
    let costs: Vec<f64> = routed.iter().filter_map(|r| r.avg_cost).collect();
    let max_batch_cost = costs.iter().copied().fold(0.0, f64::max);
    let total_cost = routed.iter().fold(0.0, |acc, r| acc + r.avg_cost.unwrap_or(0.0) * r.size as f64);
    let cost_variance = if costs.is_empty() {
        0.0
    } else {
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / costs.len() as f64
    };
    Aggregates {
        mean_performance,
        max_batch_cost,
        total_cost,
        cost_variance,
        unrouted_batches: rows.len() - routed.len(),
    }
}

/// Estimates, optional ground truth and models of one query set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Scores the router optimizes (point estimates or lower bounds).
    pub scores: ScoreMatrix,
    /// True scores, used only to evaluate assignments.
    pub truth: Option<ScoreMatrix>,
    pub models: Vec<ModelSpec>,
}

impl Dataset {
    fn batch_scores(&self, rows: &[usize]) -> ScoreMatrix {
        self.scores.select_rows(rows)
    }

    fn metrics(
        &self,
        b: usize,
        rows: &[usize],
        assignment: Option<&[usize]>,
        status: BatchStatus,
        t: f64,
    ) -> BatchMetrics {
        let n = rows.len() as f64;
        let mean = |m: &ScoreMatrix, a: &[usize]| rows.iter().zip(a).map(|(&i, &j)| m.get(i, j)).sum::<f64>() / n;
        BatchMetrics {
            batch_index: b,
            size: rows.len(),
            status,
            objective_est: assignment.map(|a| mean(&self.scores, a)),
            performance_true: assignment.and_then(|a| self.truth.as_ref().map(|t| mean(t, a))),
            avg_cost: assignment.map(|a| a.iter().map(|&j| self.models[j].cost).sum::<f64>() / n),
            wall_time_s: t,
        }
    }
}

/// Routes every batch of `plan` query by query, once per `lambda`.
pub fn sweep_per_query(plan: &BatchPlan, data: &Dataset, lambda_grid: &[f64]) -> Vec<(f64, MetricsReport)> {
    lambda_grid
        .iter()
        .map(|&lambda| {
            let params = RouterParams { lambda, tie_break: Default::default() };
            let rows = plan
                .batches
                .par_iter()
                .enumerate()
                .map(|(b, rows)| {
                    let started = Instant::now();
                    let picks = route_per_query(&data.batch_scores(rows), &data.models, &params);
                    data.metrics(b, rows, Some(&picks), BatchStatus::PerQuery, started.elapsed().as_secs_f64())
                })
                .collect();
            (lambda, MetricsReport::from_batches(rows))
        })
        .collect()
}

/// Solves every batch of `plan` exactly under each average budget. Solver
/// errors are recorded as [`BatchStatus::Error`] rows.
pub fn run_batch_experiment(
    plan: &BatchPlan,
    data: &Dataset,
    budgets: &[f64],
    opts: &SolverOptions,
) -> Vec<(f64, MetricsReport)> {
    budgets
        .iter()
        .map(|&budget| {
            let rows = plan
                .batches
                .par_iter()
                .enumerate()
                .map(|(b, rows)| {
                    let started = Instant::now();
                    let problem = BatchProblem::new(data.batch_scores(rows), data.models.clone(), budget);
                    let result = solve_batch(&problem, opts);
                    let t = started.elapsed().as_secs_f64();
                    match result {
                        Ok(sol) if sol.status == SolveStatus::Infeasible => {
                            data.metrics(b, rows, None, BatchStatus::Infeasible, t)
                        }
                        Ok(sol) => data.metrics(b, rows, Some(&sol.assignment), sol.status.into(), t),
                        Err(_) => data.metrics(b, rows, None, BatchStatus::Error, t),
                    }
                })
                .collect();
            (budget, MetricsReport::from_batches(rows))
        })
        .collect()
}

/// Settings of [`full_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Share of queries held out for allocation; at 1 or above, allocation
    /// and evaluation use the whole set.
    pub calib_fraction: f64,
    pub batch_size: usize,
    pub gpu_budget: u64,
    /// Average cost per query, for allocation and online routing alike.
    pub budget: f64,
    pub scheme: Scheme,
    /// Seed of the calibration split and of random batching.
    pub seed: u64,
    /// Reference `lambda` whose per-query picks order adversarial batches.
    pub adversarial_lambda: f64,
    pub opts: SolverOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            calib_fraction: 0.1,
            batch_size: 100,
            gpu_budget: 0,
            budget: 0.0,
            scheme: Scheme::Random,
            seed: 0,
            adversarial_lambda: 0.0,
            opts: SolverOptions::default(),
        }
    }
}

/// Calibration and evaluation rows of a seeded split.
pub fn calibration_split(n: usize, calib_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    if calib_fraction >= 1.0 {
        return (order.clone(), order);
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((calib_fraction.max(0.0) * n as f64).round() as usize).clamp(1.min(n), n);
    let eval = order.split_off(k);
    (order, eval)
}

/// Allocation on a calibration split, then exact batch routing of the
/// remaining queries with the chosen instance counts.
///
/// Calibration batches are consecutive full batches of the shuffled
/// calibration rows; with fewer rows than one batch, all of them form a
/// single batch.
pub fn full_pipeline(data: &Dataset, cfg: &PipelineConfig) -> Result<(MetricsReport, AllocationSolution), AllocError> {
    let n = data.scores.n_rows();
    let (calib, eval) = calibration_split(n, cfg.calib_fraction, cfg.seed);
    let b = cfg.batch_size.max(1);
    let batches: Vec<ScoreMatrix> = if calib.len() >= b {
        calib.chunks_exact(b).map(|rows| data.scores.select_rows(rows)).collect()
    } else {
        vec![data.scores.select_rows(&calib)]
    };
    let problem =
        AllocationProblem { batches, models: data.models.clone(), gpu_budget: cfg.gpu_budget, budget: cfg.budget };
    let allocation = solve_allocation(&problem, &cfg.opts)?;

    let online = Dataset {
        scores: data.scores.select_rows(&eval),
        truth: data.truth.as_ref().map(|t| t.select_rows(&eval)),
        models: allocation.apply(&data.models),
    };
    let ids = online.scores.rows().to_vec();
    let plan = match cfg.scheme {
        Scheme::Random => make_random_batches(&ids, b, cfg.seed),
        Scheme::Adversarial => {
            make_adversarial_batches(&ids, b, &pick_costs(&online.scores, &online.models, cfg.adversarial_lambda))
        }
    };
    let (_, report) = run_batch_experiment(&plan, &online, &[cfg.budget], &cfg.opts).remove(0);
    Ok((report, allocation))
}
