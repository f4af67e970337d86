//! Routing decisions: the per-query utility rule, the exact batch solver, the
//! robust variant and the exhaustive oracle.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{RelaxError, SolveError};
use crate::model::{
    validate_problem, BatchProblem, IntervalMatrix, ModelSpec, RouterParams, RoutingSolution, ScoreMatrix, SolveStatus,
};
use crate::relax::{relax, relax_warm, Fixings, Instance, Relaxed};

/// What `solve_batch` does when no assignment meets the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Report `SolveStatus::Infeasible`.
    #[default]
    Error,
    /// Send every query to the cheapest model with free capacity and report
    /// `SolveStatus::Fallback`.
    CheapestFeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub time_limit: Duration,
    /// Absolute gap, in mean-score units, at which a solution counts as
    /// optimal.
    pub gap_tolerance: f64,
    pub node_limit: usize,
    pub fallback: Fallback,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            time_limit: Duration::from_secs(2),
            gap_tolerance: 0.0,
            node_limit: 1_000_000,
            fallback: Fallback::Error,
        }
    }
}

impl SolverOptions {
    pub fn with_gap(mut self, gap: f64) -> Self {
        self.gap_tolerance = gap;
        self
    }

    pub fn with_time_limit(mut self, limit: Duration) -> Self {
        self.time_limit = limit;
        self
    }
}

/// Routes each query independently to `argmax_j a_ij - lambda * c_j`,
/// ignoring budget and capacity. Ties go to the cheaper model, then to the
/// lower index.
pub fn route_per_query(scores: &ScoreMatrix, models: &[ModelSpec], params: &RouterParams) -> Vec<usize> {
    (0..scores.n_rows())
        .map(|i| {
            let mut best = 0;
            let mut best_u = f64::NEG_INFINITY;
            for (j, m) in models.iter().enumerate() {
                let u = scores.get(i, j) - params.lambda * m.cost;
                let better = u > best_u || (u == best_u && m.cost < models[best].cost);
                if better {
                    best = j;
                    best_u = u;
                }
            }
            best
        })
        .collect()
}

/// Score matrix for robust routing: the lower prediction bounds.
///
/// For a binary assignment the worst case of the averaged objective over the
/// interval box puts every chosen cell at its lower bound, so maximizing the
/// ordinary objective on this matrix maximizes the worst-case objective.
pub fn robustify(intervals: &IntervalMatrix) -> ScoreMatrix {
    intervals.lower().clone()
}

/// Solves one batch exactly by branch-and-bound on the budget-dualized
/// relaxation.
pub fn solve_batch(p: &BatchProblem, opts: &SolverOptions) -> Result<RoutingSolution, SolveError> {
    let structural: Vec<_> = validate_problem(p).into_iter().filter(|v| !v.is_infeasibility()).collect();
    if !structural.is_empty() {
        return Err(SolveError::InvalidProblem(structural));
    }
    let inst = Instance::from_batch(p);
    match branch_and_bound(&inst, opts)? {
        Some(out) => Ok(solution_from(p, out.assign, out.bound / inst.n as f64, out.status)),
        None => match opts.fallback {
            Fallback::Error => Ok(RoutingSolution::infeasible()),
            Fallback::CheapestFeasible => Ok(match cheapest_assignment(&inst) {
                Some(a) => {
                    let mut s = solution_from(p, a, f64::NAN, SolveStatus::Fallback);
                    s.bound = s.objective;
                    s.gap = 0.0;
                    s
                }
                None => RoutingSolution::infeasible(),
            }),
        },
    }
}

fn solution_from(p: &BatchProblem, assignment: Vec<usize>, bound: f64, status: SolveStatus) -> RoutingSolution {
    let (objective, realized_avg_cost) = p.evaluate(&assignment);
    let bound = bound.max(objective);
    RoutingSolution { assignment, objective, realized_avg_cost, bound, gap: bound - objective, status }
}

/// Every query to the cheapest model that still has room, in query order.
fn cheapest_assignment(inst: &Instance) -> Option<Vec<usize>> {
    let mut order: Vec<usize> = (0..inst.m).collect();
    order.sort_by(|&a, &b| inst.costs[a].total_cmp(&inst.costs[b]).then(a.cmp(&b)));
    let mut load = vec![vec![0usize; inst.m]; inst.n_groups()];
    let mut assign = vec![0; inst.n];
    for i in 0..inst.n {
        let g = inst.group[i];
        let j = *order.iter().find(|&&j| load[g][j] < inst.caps[g][j])?;
        load[g][j] += 1;
        assign[i] = j;
    }
    Some(assign)
}

/// Exhaustive search over all `M^N` assignments. Among optimal assignments
/// the lexicographically smallest is returned.
pub fn brute_force(p: &BatchProblem) -> Result<RoutingSolution, SolveError> {
    let size = (p.n_models() as f64).powi(p.n_queries() as i32);
    if size > 1e7 {
        return Err(SolveError::TooLarge(size));
    }
    let structural: Vec<_> = validate_problem(p).into_iter().filter(|v| !v.is_infeasibility()).collect();
    if !structural.is_empty() {
        return Err(SolveError::InvalidProblem(structural));
    }
    let inst = Instance::from_batch(p);
    Ok(match enumerate_best(&inst) {
        Some(a) => {
            let mut s = solution_from(p, a, f64::NEG_INFINITY, SolveStatus::Optimal);
            s.bound = s.objective;
            s.gap = 0.0;
            s
        }
        None => RoutingSolution::infeasible(),
    })
}

/// Lexicographic depth-first enumeration; keeps the first assignment that
/// beats the incumbent by more than rounding noise.
pub(crate) fn enumerate_best(inst: &Instance) -> Option<Vec<usize>> {
    struct Dfs<'a> {
        inst: &'a Instance,
        min_cost: f64,
        cur: Vec<usize>,
        load: Vec<Vec<usize>>,
        best: Option<(f64, Vec<usize>)>,
    }
    impl Dfs<'_> {
        fn go(&mut self, i: usize, cost: f64) {
            let inst = self.inst;
            if i == inst.n {
                if !inst.within_budget(inst.cost(&self.cur)) {
                    return;
                }
                let v = inst.value(&self.cur);
                if self.best.as_ref().is_none_or(|(b, _)| v > b + 1e-12) {
                    self.best = Some((v, self.cur.clone()));
                }
                return;
            }
            let remaining = (inst.n - i - 1) as f64;
            let g = inst.group[i];
            for j in 0..inst.m {
                if self.load[g][j] >= inst.caps[g][j] {
                    continue;
                }
                let c = cost + inst.costs[j];
                if c + remaining * self.min_cost > inst.budget_total * (1.0 + 1e-12) {
                    continue;
                }
                self.cur[i] = j;
                self.load[g][j] += 1;
                self.go(i + 1, c);
                self.load[g][j] -= 1;
            }
        }
    }
    let min_cost = inst.costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut dfs = Dfs {
        inst,
        min_cost: if min_cost.is_finite() { min_cost } else { 0.0 },
        cur: vec![0; inst.n],
        load: vec![vec![0; inst.m]; inst.n_groups()],
        best: None,
    };
    dfs.go(0, 0.0);
    dfs.best.map(|(_, a)| a)
}

/// Result of a branch-and-bound run, in total (un-averaged) units.
#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub assign: Vec<usize>,
    pub value: f64,
    pub bound: f64,
    pub status: SolveStatus,
}

struct Node {
    bound: f64,
    id: usize,
    fix: Fixings,
    relaxed: Relaxed,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then_with(|| Reverse(self.id).cmp(&Reverse(other.id)))
    }
}

struct Incumbent {
    assign: Vec<usize>,
    value: f64,
}

impl Incumbent {
    fn offer(&mut self, inst: &Instance, assign: &[usize]) {
        let v = inst.value(assign);
        if v > self.value + 1e-12 && inst.is_feasible(assign) {
            let mut a = assign.to_vec();
            improve(inst, &mut a);
            self.value = inst.value(&a);
            self.assign = a;
        }
    }
}

/// Best-bound branch-and-bound. `Ok(None)` means proven infeasible.
pub(crate) fn branch_and_bound(inst: &Instance, opts: &SolverOptions) -> Result<Option<Outcome>, SolveError> {
    let started = Instant::now();
    let n = inst.n.max(1) as f64;
    let prune_tol = (opts.gap_tolerance * n).max(1e-10);

    let root_fix = Fixings::none(inst.n, inst.m);
    let grid = objective_grid(inst);
    let tighten = |r: &mut Relaxed| {
        if let Some(d) = grid {
            r.bound = r.bound.min((r.bound * d + 1e-6).floor() / d);
        }
    };
    let mut root = match relax(inst, &root_fix) {
        Ok(r) => r,
        Err(RelaxError::Infeasible) => return Ok(None),
        Err(e) => return Err(e.into()),
    };

    tighten(&mut root);
    let mut inc = Incumbent { assign: Vec::new(), value: f64::NEG_INFINITY };
    inc.offer(inst, &root.incumbent);
    if let Some(a) = greedy_repair(inst, &root.dense(inst.m)) {
        inc.offer(inst, &a);
    }
    if root.is_integral() {
        inc.offer(inst, &root.base);
    }

    let mut heap = BinaryHeap::new();
    let mut next_id = 1;
    let mut pruned_bound = f64::NEG_INFINITY;
    if root.is_integral() {
        pruned_bound = root.bound;
    } else {
        heap.push(Node { bound: root.bound, id: 0, fix: root_fix, relaxed: root });
    }

    let mut nodes = 1;
    let mut limit = None;
    while let Some(node) = heap.pop() {
        if node.bound <= inc.value + prune_tol {
            pruned_bound = pruned_bound.max(node.bound);
            // Best-bound order: every remaining node is at most this good.
            if let Some(rest) = heap.peek() {
                pruned_bound = pruned_bound.max(rest.bound);
            }
            heap.clear();
            break;
        }
        if nodes >= opts.node_limit {
            limit = Some("node");
            heap.push(node);
            break;
        }
        if started.elapsed() >= opts.time_limit {
            limit = Some("time");
            heap.push(node);
            break;
        }

        let children = match load_split(inst, &node.relaxed) {
            // The budget couples queries only through model loads, so a
            // single-group node splits on the fractional load of a model.
            Some((j, load)) => {
                let mut below = node.fix.clone();
                below.cap_load(j, load);
                let mut above = node.fix;
                above.floor_load(j, load + 1);
                [above, below]
            }
            None => {
                let (q, j) = branching_variable(inst, &node.relaxed);
                let mut up = node.fix.clone();
                up.fix_one(q, j);
                let mut down = node.fix;
                down.fix_zero(q, j);
                [up, down]
            }
        };
        for fix in children {
            nodes += 1;
            let mut r = match relax_warm(inst, &fix, node.relaxed.bracket.as_ref()) {
                Ok(r) => r,
                Err(RelaxError::Infeasible) => continue,
                Err(e) => return Err(e.into()),
            };
            tighten(&mut r);
            inc.offer(inst, &r.incumbent);
            if r.is_integral() {
                inc.offer(inst, &r.base);
                pruned_bound = pruned_bound.max(r.bound);
                continue;
            }
            if r.bound <= inc.value + prune_tol {
                pruned_bound = pruned_bound.max(r.bound);
                continue;
            }
            heap.push(Node { bound: r.bound, id: next_id, fix, relaxed: r });
            next_id += 1;
        }
    }

    let open_bound = heap.peek().map_or(f64::NEG_INFINITY, |n| n.bound);
    if inc.assign.is_empty() {
        return match limit {
            Some(l) => Err(SolveError::LimitReached { limit: l }),
            None => Ok(None),
        };
    }
    let bound = inc.value.max(pruned_bound).max(open_bound);
    let status = if bound - inc.value <= opts.gap_tolerance * n + 1e-9 {
        SolveStatus::Optimal
    } else {
        SolveStatus::GapCertified
    };
    Ok(Some(Outcome { value: inc.value, assign: inc.assign, bound, status }))
}

/// Largest denominators tried when looking for a common score grid.
const MAX_GRID: u64 = 1000;
const MAX_GRID_LCM: u64 = 1_000_000;

/// If every score is a multiple of `1 / d` for a modest integer `d` (as
/// with averages of binary outcomes), returns `d`: every objective value is
/// then a multiple of `1 / d`, and bounds can be rounded down to that grid.
fn objective_grid(inst: &Instance) -> Option<f64> {
    let mut values: Vec<f64> = inst.scores.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut lcm = 1u64;
    for v in values {
        if (v * lcm as f64 - (v * lcm as f64).round()).abs() <= 1e-9 {
            continue;
        }
        let d = (1..=MAX_GRID).find(|&d| (v * d as f64 - (v * d as f64).round()).abs() <= 1e-9)?;
        lcm = lcm / gcd(lcm, d) * d;
        if lcm > MAX_GRID_LCM {
            return None;
        }
    }
    Some(lcm as f64)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// For single-group instances, a model whose load is fractional in the
/// relaxation, with the integral part of that load.
fn load_split(inst: &Instance, r: &Relaxed) -> Option<(usize, usize)> {
    if inst.n_groups() != 1 {
        return None;
    }
    let mut delta = vec![0i64; inst.m];
    for &(_, from, to) in &r.frac_moves {
        delta[from] -= 1;
        delta[to] += 1;
    }
    let j = delta.iter().position(|&d| d > 0)?;
    let load = r.base.iter().filter(|&&k| k == j).count();
    Some((j, load))
}

/// Picks the most evenly split fractional row (ties: lowest query index) and
/// within it the variable closest to one half (ties: lowest model index).
fn branching_variable(inst: &Instance, r: &Relaxed) -> (usize, usize) {
    let m = inst.m;
    let x = r.dense(m);
    let mut rows: Vec<usize> = r.frac_moves.iter().map(|&(q, _, _)| q).collect();
    rows.sort_unstable();
    rows.dedup();
    let entropy =
        |q: usize| -> f64 { x[q * m..(q + 1) * m].iter().filter(|&&v| v > 1e-12).map(|&v| -v * v.ln()).sum() };
    let mut best_q = rows[0];
    let mut best_h = entropy(best_q);
    for &q in &rows[1..] {
        let h = entropy(q);
        if h > best_h + 1e-12 {
            best_q = q;
            best_h = h;
        }
    }
    let row = &x[best_q * m..(best_q + 1) * m];
    let mut best_j = 0;
    let mut best_d = f64::INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if v > 1e-12 && v < 1.0 - 1e-12 {
            let d = (v - 0.5).abs();
            if d < best_d - 1e-12 {
                best_d = d;
                best_j = j;
            }
        }
    }
    (best_q, best_j)
}

/// Rounds each row of a fractional solution to its largest entry, then moves
/// queries off overfull models and onto cheaper ones, always choosing the
/// move that loses the least score (per dollar saved, for the budget).
pub(crate) fn greedy_repair(inst: &Instance, x: &[f64]) -> Option<Vec<usize>> {
    let m = inst.m;
    let mut assign: Vec<usize> = (0..inst.n)
        .map(|i| {
            let row = &x[i * m..(i + 1) * m];
            let mut best = 0;
            for j in 1..m {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let mut load = inst.loads(&assign);

    for g in 0..inst.n_groups() {
        for j in 0..m {
            while load[g][j] > inst.caps[g][j] {
                let mut best: Option<(f64, usize, usize)> = None;
                for &i in inst.members(g) {
                    if assign[i] != j {
                        continue;
                    }
                    for k in 0..m {
                        if k == j || load[g][k] >= inst.caps[g][k] {
                            continue;
                        }
                        let loss = inst.score(i, j) - inst.score(i, k);
                        if best.is_none_or(|(l, _, _)| loss < l) {
                            best = Some((loss, i, k));
                        }
                    }
                }
                let (_, i, k) = best?;
                assign[i] = k;
                load[g][j] -= 1;
                load[g][k] += 1;
            }
        }
    }

    let mut cost = inst.cost(&assign);
    while !inst.within_budget(cost) {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..inst.n {
            let g = inst.group[i];
            let j = assign[i];
            for k in 0..m {
                let saved = inst.costs[j] - inst.costs[k];
                if saved <= 0.0 || load[g][k] >= inst.caps[g][k] {
                    continue;
                }
                let ratio = (inst.score(i, j) - inst.score(i, k)) / saved;
                if best.is_none_or(|(r, _, _)| ratio < r) {
                    best = Some((ratio, i, k));
                }
            }
        }
        let (_, i, k) = best?;
        let g = inst.group[i];
        load[g][assign[i]] -= 1;
        load[g][k] += 1;
        cost += inst.costs[k] - inst.costs[assign[i]];
        assign[i] = k;
    }
    Some(assign)
}

/// Best-improvement local search: repeatedly applies the single-query
/// move with the largest score gain that keeps the assignment feasible.
pub(crate) fn improve(inst: &Instance, assign: &mut [usize]) {
    let m = inst.m;
    let mut load = inst.loads(assign);
    let mut cost = inst.cost(assign);
    for _ in 0..inst.n * m {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..inst.n {
            let g = inst.group[i];
            let j = assign[i];
            for k in 0..m {
                if k == j || load[g][k] >= inst.caps[g][k] {
                    continue;
                }
                let gain = inst.score(i, k) - inst.score(i, j);
                if gain <= 1e-12 || !inst.within_budget(cost + inst.costs[k] - inst.costs[j]) {
                    continue;
                }
                if best.is_none_or(|(b, _, _)| gain > b) {
                    best = Some((gain, i, k));
                }
            }
        }
        let Some((_, i, k)) = best else { break };
        let g = inst.group[i];
        load[g][assign[i]] -= 1;
        load[g][k] += 1;
        cost += inst.costs[k] - inst.costs[assign[i]];
        assign[i] = k;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_solution;

    fn problem(rows: &[Vec<f64>], costs: &[f64], caps: &[Option<u32>], budget: f64) -> BatchProblem {
        let scores = ScoreMatrix::from_rows(rows).unwrap();
        let models = costs
            .iter()
            .zip(caps)
            .enumerate()
            .map(|(j, (&c, cap))| match cap {
                Some(k) => ModelSpec::new(format!("m{}", j + 1), c, 1, 1).with_instances(*k),
                None => ModelSpec::cloud(format!("m{}", j + 1), c),
            })
            .collect();
        BatchProblem::new(scores, models, budget)
    }

    fn motivating() -> BatchProblem {
        problem(&[vec![1.0, 0.5], vec![0.9, 0.2]], &[10.0, 1.0], &[None, None], 5.5)
    }

    #[test]
    fn per_query_lambda_zero_is_row_argmax() {
        let p = problem(&[vec![0.1, 0.9, 0.3], vec![0.8, 0.2, 0.8]], &[1.0, 2.0, 0.5], &[None; 3], 1.0);
        let picks = route_per_query(&p.scores, &p.models, &RouterParams::new(0.0).unwrap());
        // Row 2 ties between models 1 and 3; the cheaper one wins.
        assert_eq!(picks, vec![1, 2]);
    }

    #[test]
    fn per_query_large_lambda_picks_cheapest() {
        let p = problem(&[vec![0.1, 0.9, 0.3], vec![0.8, 0.2, 0.7]], &[1.0, 2.0, 0.5], &[None; 3], 1.0);
        // (max a - min a) / smallest cost gap = 0.8 / 0.5
        let picks = route_per_query(&p.scores, &p.models, &RouterParams::new(1.7).unwrap());
        assert_eq!(picks, vec![2, 2]);
    }

    #[test]
    fn per_query_priced_example() {
        // Output prices in dollars per million tokens.
        let scores = ScoreMatrix::from_rows(&[vec![0.8, 0.7]]).unwrap();
        let models = vec![ModelSpec::cloud("deepseek-chat", 0.28), ModelSpec::cloud("glm-4-flash", 0.0137)];
        let picks = route_per_query(&scores, &models, &RouterParams::new(1.0).unwrap());
        assert_eq!(picks, vec![1]);
        assert!(((0.8 - 0.28) - 0.52f64).abs() < 1e-12);
        assert!(((0.7 - 0.0137) - 0.6863f64).abs() < 1e-12);
    }

    #[test]
    fn robust_pick_prefers_tight_interval() {
        let lower = ScoreMatrix::from_rows(&[vec![0.2, 0.5]]).unwrap();
        let upper = ScoreMatrix::from_rows(&[vec![0.9, 0.6]]).unwrap();
        let iv = IntervalMatrix::new(lower, upper).unwrap();
        let robust = robustify(&iv);
        let p = BatchProblem::new(robust, vec![ModelSpec::cloud("m1", 0.0), ModelSpec::cloud("m2", 0.0)], 1.0);
        let s = solve_batch(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.assignment, vec![1]);
    }

    #[test]
    fn robustify_degenerate_is_identity() {
        let a = ScoreMatrix::from_rows(&[vec![0.3, 0.6], vec![0.1, 0.2]]).unwrap();
        assert_eq!(robustify(&IntervalMatrix::degenerate(a.clone())), a);
    }

    #[test]
    fn motivating_example_is_solved_exactly() {
        let p = motivating();
        let s = solve_batch(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.assignment, vec![1, 0]);
        assert!((s.objective - 0.7).abs() < 1e-12);
        assert!((s.realized_avg_cost - 5.5).abs() < 1e-12);
        assert!(validate_solution(&p, &s).is_empty());
        let b = brute_force(&p).unwrap();
        assert_eq!(b.assignment, vec![1, 0]);
    }

    #[test]
    fn unit_capacities_force_a_permutation() {
        let p = problem(&[vec![0.9, 0.1], vec![0.8, 0.7]], &[0.0, 0.0], &[Some(1), Some(1)], 1.0);
        let s = solve_batch(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.loads(2), vec![1, 1]);
        assert_eq!(s.assignment, vec![0, 1]);
        assert!((s.objective - 0.8).abs() < 1e-12);
    }

    #[test]
    fn slack_constraints_match_per_query() {
        let rows = vec![vec![0.3, 0.6, 0.1], vec![0.9, 0.2, 0.4], vec![0.5, 0.5, 0.7]];
        let p = problem(&rows, &[3.0, 2.0, 1.0], &[None; 3], f64::INFINITY);
        let s = solve_batch(&p, &SolverOptions::default()).unwrap();
        let pq = route_per_query(&p.scores, &p.models, &RouterParams::new(0.0).unwrap());
        assert_eq!(s.assignment, pq);
        assert!((s.objective - (0.6 + 0.9 + 0.7) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn brute_force_single_query_and_ties() {
        let p = problem(&[vec![0.4, 0.9, 0.6]], &[1.0, 5.0, 2.0], &[None; 3], 2.0);
        assert_eq!(brute_force(&p).unwrap().assignment, vec![2]);
        let p = problem(&[vec![0.5, 0.5], vec![0.5, 0.5]], &[0.0, 0.0], &[Some(1), Some(2)], 1.0);
        assert_eq!(brute_force(&p).unwrap().assignment, vec![0, 1]);
    }

    #[test]
    fn brute_force_refuses_huge_instances() {
        let rows = vec![vec![0.5; 4]; 12];
        let p = problem(&rows, &[0.0; 4], &[None; 4], 1.0);
        assert!(matches!(brute_force(&p), Err(SolveError::TooLarge(_))));
    }

    #[test]
    fn infeasible_budget_and_fallback() {
        let p = problem(&[vec![0.9, 0.5], vec![0.8, 0.4]], &[2.0, 1.0], &[None, Some(1)], 1.0);
        let s = solve_batch(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        assert_eq!(brute_force(&p).unwrap().status, SolveStatus::Infeasible);

        let opts = SolverOptions { fallback: Fallback::CheapestFeasible, ..SolverOptions::default() };
        let s = solve_batch(&p, &opts).unwrap();
        assert_eq!(s.status, SolveStatus::Fallback);
        assert_eq!(s.assignment, vec![1, 0]);
        assert!(validate_solution(&p, &s).is_empty());
    }

    #[test]
    fn invalid_problem_is_an_error() {
        let scores = ScoreMatrix::from_rows(&[vec![0.5]]).unwrap();
        let p = BatchProblem::new(scores, vec![ModelSpec::cloud("other", 0.0)], 1.0);
        assert!(matches!(solve_batch(&p, &SolverOptions::default()), Err(SolveError::InvalidProblem(_))));
    }

    #[test]
    fn greedy_repair_respects_constraints() {
        let p = problem(
            &[vec![0.9, 0.5, 0.1], vec![0.8, 0.6, 0.2], vec![0.7, 0.3, 0.3]],
            &[3.0, 1.0, 0.0],
            &[Some(1), None, None],
            1.0,
        );
        let inst = Instance::from_batch(&p);
        let mut x = vec![0.0; 9];
        for i in 0..3 {
            x[i * 3] = 1.0;
        }
        let a = greedy_repair(&inst, &x).unwrap();
        assert!(inst.is_feasible(&a));
    }
}
