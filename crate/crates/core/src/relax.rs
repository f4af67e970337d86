//! Linear relaxation of the batch routing program.
//!
//! Dualizing the budget constraint with a multiplier `mu >= 0` leaves a
//! capacitated transportation problem (queries to models), whose polytope is
//! integral. The Lagrangian dual
//!
//! ```text
//! L(mu) = max_{x in T} sum_ij (a_ij - mu * c_j) x_ij + mu * budget
//! ```
//!
//! is convex and piecewise linear in `mu`, and its minimum equals the LP
//! relaxation value. The minimizer is located exactly by intersecting the
//! supporting lines of the two solutions that bracket the budget, and the LP
//! optimum is recovered as a point on the segment between two adjacent
//! transportation vertices. Only the queries of one path or cycle of moves
//! end up fractional.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::error::RelaxError;
use crate::model::{BatchProblem, COST_TOLERANCE};

const UNASSIGNED: usize = usize::MAX;
const MAX_BREAKPOINT_STEPS: usize = 200;

/// Flat routing instance: queries split into groups that each carry their own
/// per-model capacities, all sharing one total budget.
///
/// A single batch is one group. Calibration batches in the allocation problem
/// are one group each.
#[derive(Debug, Clone)]
pub(crate) struct Instance {
    pub n: usize,
    pub m: usize,
    pub scores: Vec<f64>,
    pub costs: Vec<f64>,
    pub group: Vec<usize>,
    /// `caps[g][j]`, clamped to the size of group `g`.
    pub caps: Vec<Vec<usize>>,
    /// Total budget in dollars, tolerance included. May be infinite.
    pub budget_total: f64,
    members: Vec<Vec<usize>>,
}

impl Instance {
    pub fn new(scores: Vec<f64>, costs: Vec<f64>, group: Vec<usize>, caps: Vec<Vec<usize>>, budget_total: f64) -> Self {
        let n = group.len();
        let m = costs.len();
        debug_assert_eq!(scores.len(), n * m);
        let mut members = vec![Vec::new(); caps.len()];
        for (i, &g) in group.iter().enumerate() {
            members[g].push(i);
        }
        let caps = caps
            .into_iter()
            .zip(&members)
            .map(|(row, mem)| row.into_iter().map(|c| c.min(mem.len())).collect())
            .collect();
        Self { n, m, scores, costs, group, caps, budget_total, members }
    }

    pub fn from_batch(p: &BatchProblem) -> Self {
        let n = p.n_queries();
        let caps = p.capacities().iter().map(|c| c.clamp_to(n)).collect();
        Self::new(p.scores.values().to_vec(), p.costs(), vec![0; n], vec![caps], total_budget(p.budget, n))
    }

    #[inline]
    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.m + j]
    }

    pub fn value(&self, assign: &[usize]) -> f64 {
        assign.iter().enumerate().map(|(i, &j)| self.score(i, j)).sum()
    }

    pub fn cost(&self, assign: &[usize]) -> f64 {
        assign.iter().map(|&j| self.costs[j]).sum()
    }

    pub fn n_groups(&self) -> usize {
        self.caps.len()
    }

    pub fn members(&self, g: usize) -> &[usize] {
        &self.members[g]
    }

    pub fn within_budget(&self, total_cost: f64) -> bool {
        total_cost <= self.budget_total
    }

    /// Per-group loads of an assignment.
    pub fn loads(&self, assign: &[usize]) -> Vec<Vec<usize>> {
        let mut load = vec![vec![0; self.m]; self.n_groups()];
        for (i, &j) in assign.iter().enumerate() {
            load[self.group[i]][j] += 1;
        }
        load
    }

    pub fn is_feasible(&self, assign: &[usize]) -> bool {
        self.within_budget(self.cost(assign))
            && self.loads(assign).iter().zip(&self.caps).all(|(l, c)| l.iter().zip(c).all(|(a, b)| a <= b))
    }
}

/// Total budget of `n` queries at an average of `per_query` dollars, with the
/// absolute per-query tolerance folded in.
pub(crate) fn total_budget(per_query: f64, n: usize) -> f64 {
    if per_query.is_infinite() {
        f64::INFINITY
    } else {
        (per_query + COST_TOLERANCE) * n as f64
    }
}

/// Variables fixed by branching: a query forced onto one model, or a
/// (query, model) pair excluded.
///
/// Internally the solver may also bound the number of queries a model
/// receives; such bounds apply to single-group instances only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixings {
    m: usize,
    forced: Vec<Option<usize>>,
    forbidden: Vec<bool>,
    load_min: Vec<usize>,
    load_max: Vec<usize>,
}

impl Fixings {
    pub fn none(n_queries: usize, n_models: usize) -> Self {
        Self {
            m: n_models,
            forced: vec![None; n_queries],
            forbidden: vec![false; n_queries * n_models],
            load_min: vec![0; n_models],
            load_max: vec![usize::MAX; n_models],
        }
    }

    /// Require at most `max` queries on `model`.
    pub(crate) fn cap_load(&mut self, model: usize, max: usize) {
        self.load_max[model] = self.load_max[model].min(max);
    }

    /// Require at least `min` queries on `model`.
    pub(crate) fn floor_load(&mut self, model: usize, min: usize) {
        self.load_min[model] = self.load_min[model].max(min);
    }

    pub(crate) fn load_min(&self, model: usize) -> usize {
        self.load_min[model]
    }

    fn has_load_floor(&self) -> bool {
        self.load_min.iter().any(|&v| v > 0)
    }

    /// Capacity of `model` in group `g` after load bounds.
    fn cap(&self, inst: &Instance, g: usize, model: usize) -> usize {
        inst.caps[g][model].min(self.load_max[model])
    }

    /// Fix `x[query][model] = 1`.
    pub fn fix_one(&mut self, query: usize, model: usize) {
        self.forced[query] = Some(model);
    }

    /// Fix `x[query][model] = 0`.
    pub fn fix_zero(&mut self, query: usize, model: usize) {
        self.forbidden[query * self.m + model] = true;
    }

    pub fn forced(&self, query: usize) -> Option<usize> {
        self.forced[query]
    }

    pub fn allowed(&self, query: usize, model: usize) -> bool {
        match self.forced[query] {
            Some(j) => j == model && !self.forbidden[query * self.m + model],
            None => !self.forbidden[query * self.m + model],
        }
    }

    pub fn count(&self) -> usize {
        self.forced.iter().filter(|f| f.is_some()).count() + self.forbidden.iter().filter(|&&b| b).count()
    }

    fn loads_ok(&self, inst: &Instance, assign: &[usize]) -> bool {
        if !self.has_load_floor() {
            return true;
        }
        let mut load = vec![0usize; self.m];
        for &j in assign {
            load[j] += 1;
        }
        load.iter().zip(&self.load_min).all(|(l, lo)| l >= lo) && inst.n_groups() == 1
    }
}

/// Solver state carried from a parent node into its children.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmStart {
    pub mu: f64,
}

/// Optimal solution of the linear relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedSolution {
    n_models: usize,
    fractional: Vec<f64>,
    /// Upper bound on the integer optimum, in mean-score units.
    pub bound: f64,
    /// Multiplier on the budget constraint, in score per dollar of total cost.
    pub dual_cost: f64,
    pub basis_info: WarmStart,
}

impl RelaxedSolution {
    pub fn x(&self, query: usize, model: usize) -> f64 {
        self.fractional[query * self.n_models + model]
    }

    pub fn row(&self, query: usize) -> &[f64] {
        &self.fractional[query * self.n_models..(query + 1) * self.n_models]
    }

    pub fn fractional_assignment(&self) -> Vec<Vec<f64>> {
        self.fractional.chunks(self.n_models).map(<[f64]>::to_vec).collect()
    }

    pub fn is_integral(&self) -> bool {
        self.fractional.iter().all(|&v| v <= 1e-9 || v >= 1.0 - 1e-9)
    }
}

/// Solves the linear relaxation of `p` with branching fixings applied.
pub fn solve_relaxation(p: &BatchProblem, fixings: &Fixings) -> Result<RelaxedSolution, RelaxError> {
    let inst = Instance::from_batch(p);
    let r = relax(&inst, fixings)?;
    let n = inst.n.max(1) as f64;
    Ok(RelaxedSolution {
        n_models: inst.m,
        fractional: r.dense(inst.m),
        bound: r.bound / n,
        dual_cost: r.mu,
        basis_info: WarmStart { mu: r.mu },
    })
}

/// One set of simultaneous moves `(query, from, to)` turning one optimal
/// transportation vertex into an adjacent one.
#[derive(Debug, Clone)]
pub(crate) struct Component {
    pub moves: Vec<(usize, usize, usize)>,
    pub dcost: f64,
    pub dval: f64,
}

/// Relaxation result in total (un-averaged) units.
#[derive(Debug, Clone)]
pub(crate) struct Relaxed {
    pub bound: f64,
    pub mu: f64,
    /// Integral part of the LP solution.
    pub base: Vec<usize>,
    /// Moves applied with weight `theta` on top of `base`.
    pub frac_moves: Vec<(usize, usize, usize)>,
    pub theta: f64,
    /// Best integral feasible point found along the way.
    pub incumbent: Vec<usize>,
    /// Bracketing vertices, kept to warm-start child nodes.
    pub bracket: Option<Bracket>,
}

impl Relaxed {
    pub fn is_integral(&self) -> bool {
        self.frac_moves.is_empty()
    }

    pub fn dense(&self, m: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.base.len() * m];
        for (i, &j) in self.base.iter().enumerate() {
            x[i * m + j] = 1.0;
        }
        for &(q, from, to) in &self.frac_moves {
            x[q * m + from] -= self.theta;
            x[q * m + to] += self.theta;
        }
        x
    }

    fn integral(assign: Vec<usize>, value: f64) -> Self {
        Self {
            bound: value,
            mu: 0.0,
            base: assign.clone(),
            frac_moves: Vec::new(),
            theta: 0.0,
            incumbent: assign,
            bracket: None,
        }
    }
}

/// Solution of the inner transportation problem and its supporting line
/// `value + mu * (budget - cost)`.
#[derive(Debug, Clone)]
struct Vertex {
    assign: Vec<usize>,
    value: f64,
    cost: f64,
}

impl Vertex {
    fn new(inst: &Instance, assign: Vec<usize>) -> Self {
        let value = inst.value(&assign);
        let cost = inst.cost(&assign);
        Self { assign, value, cost }
    }

    fn line(&self, mu: f64, budget: f64) -> f64 {
        self.value + mu * (budget - self.cost)
    }
}

/// Weights of the inner transportation problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Weights {
    /// `a_ij - mu * c_j`.
    Lagrangian(f64),
    /// `-c_j`: the cheapest assignment.
    MinCost,
}

impl Weights {
    #[inline]
    fn eval(self, inst: &Instance, i: usize, j: usize) -> f64 {
        match self {
            Weights::Lagrangian(mu) => inst.score(i, j) - mu * inst.costs[j],
            Weights::MinCost => -inst.costs[j],
        }
    }
}

fn solve_inner(inst: &Instance, fix: &Fixings, wt: Weights, warm: Option<&[usize]>) -> Result<Vertex, RelaxError> {
    let floors = fix.has_load_floor();
    let scratch = || -> Result<Vec<usize>, RelaxError> {
        let a = transport(inst, fix, |i, j| wt.eval(inst, i, j))?.ok_or(RelaxError::Infeasible)?;
        if fix.loads_ok(inst, &a) {
            return Ok(a);
        }
        let start = repair(inst, fix, &a).ok_or(RelaxError::Infeasible)?;
        cancel_cycles(inst, fix, wt, start, usize::MAX)?
            .ok_or_else(|| RelaxError::Numerical("cycle canceling did not converge".into()))
    };
    let assign = match warm.and_then(|a| repair(inst, fix, a)) {
        Some(start) => {
            let limit = if floors { usize::MAX } else { MAX_CANCELLATIONS_PER_MODEL * inst.m };
            match cancel_cycles(inst, fix, wt, start, limit)? {
                Some(a) => a,
                None => scratch()?,
            }
        }
        None => scratch()?,
    };
    Ok(Vertex::new(inst, assign))
}

/// Parent state handed to a child node: the two vertices whose supporting
/// lines met at the parent's optimal multiplier.
#[derive(Debug, Clone)]
pub(crate) struct Bracket {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

pub(crate) fn relax(inst: &Instance, fix: &Fixings) -> Result<Relaxed, RelaxError> {
    relax_warm(inst, fix, None)
}

pub(crate) fn relax_warm(inst: &Instance, fix: &Fixings, warm: Option<&Bracket>) -> Result<Relaxed, RelaxError> {
    let budget = inst.budget_total;
    let mut lo: Option<Vertex> = None;
    let mut hi: Option<Vertex> = None;
    if let Some(w) = warm {
        // Any transport-feasible point yields a valid supporting line.
        for a in [&w.lo, &w.hi] {
            if let Some(a) = repair(inst, fix, a) {
                let v = Vertex::new(inst, a);
                if inst.within_budget(v.cost) {
                    if hi.as_ref().is_none_or(|h| v.value > h.value) {
                        hi = Some(v);
                    }
                } else if lo.as_ref().is_none_or(|l| v.cost > l.cost) {
                    lo = Some(v);
                }
            }
        }
    }
    let mut lo = match lo {
        Some(v) => v,
        None => {
            let top = solve_inner(inst, fix, Weights::Lagrangian(0.0), hi.as_ref().map(|v| v.assign.as_slice()))?;
            if inst.within_budget(top.cost) {
                return Ok(Relaxed::integral(top.assign, top.value));
            }
            top
        }
    };
    let mut hi = match hi {
        Some(v) => v,
        None => {
            let cheapest = solve_inner(inst, fix, Weights::MinCost, Some(&lo.assign))?;
            if !inst.within_budget(cheapest.cost) {
                return Err(RelaxError::Infeasible);
            }
            cheapest
        }
    };

    let mut mu;
    let mut bound;
    let mut steps = 0;
    loop {
        let dk = lo.cost - hi.cost;
        if !(dk > 0.0) {
            return Err(RelaxError::Numerical(format!("bracket collapsed: cost gap {dk}")));
        }
        mu = ((lo.value - hi.value) / dk).max(0.0);
        let support = lo.line(mu, budget).max(hi.line(mu, budget));
        let probe = solve_inner(inst, fix, Weights::Lagrangian(mu), Some(&hi.assign))?;
        bound = probe.line(mu, budget).max(support);
        steps += 1;
        if bound <= support + 1e-10 * (1.0 + support.abs()) || steps >= MAX_BREAKPOINT_STEPS {
            if mu == 0.0 {
                // The unconstrained optimum fits the budget.
                let v = if inst.within_budget(probe.cost) { probe } else { hi };
                return Ok(Relaxed::integral(v.assign, v.value));
            }
            break;
        }
        if inst.within_budget(probe.cost) {
            hi = probe;
        } else {
            lo = probe;
        }
    }

    let slack = budget - hi.cost;
    let mut comps = decompose(inst, &hi.assign, &lo.assign);
    // Largest cost increase first; every component is (nearly) weight-neutral
    // at `mu`, so value grows with cost along this order.
    comps.sort_by(|a, b| b.dcost.total_cmp(&a.dcost).then_with(|| a.moves[0].0.cmp(&b.moves[0].0)));

    let mut base = hi.assign.clone();
    let mut used = 0.0;
    let mut frac = None;
    for c in &comps {
        if c.dcost <= 0.0 {
            continue;
        }
        if used + c.dcost <= slack {
            apply(&mut base, &c.moves);
            used += c.dcost;
        } else {
            frac = Some(c);
            break;
        }
    }

    let mut incumbent = base.clone();
    let mut inc_used = used;
    if let Some(f) = frac {
        // Knapsack fill with the components after the fractional one.
        let start = comps.iter().position(|c| std::ptr::eq(c, f)).unwrap_or(0) + 1;
        for c in &comps[start..] {
            if c.dcost > 0.0 && inc_used + c.dcost <= slack {
                apply(&mut incumbent, &c.moves);
                inc_used += c.dcost;
            }
        }
    }
    for c in &comps {
        if c.dcost <= 0.0 && c.dval > 0.0 {
            apply(&mut incumbent, &c.moves);
        }
    }
    if !inst.is_feasible(&incumbent) {
        incumbent = hi.assign.clone();
    }

    let (frac_moves, theta) = match frac {
        Some(c) => {
            let theta = ((slack - used) / c.dcost).clamp(0.0, 1.0);
            if theta <= 1e-12 {
                (Vec::new(), 0.0)
            } else {
                (c.moves.clone(), theta)
            }
        }
        None => (Vec::new(), 0.0),
    };
    // An integral LP optimum certifies itself.
    let bound = if frac_moves.is_empty() { bound.max(inst.value(&base)) } else { bound };
    let bracket = Some(Bracket { lo: lo.assign, hi: hi.assign });
    Ok(Relaxed { bound, mu, base, frac_moves, theta, incumbent, bracket })
}

/// Turns `start` into an assignment that honours the fixings, capacities and
/// load bounds, keeping as many placements as possible. `None` if the greedy
/// fill fails.
fn repair(inst: &Instance, fix: &Fixings, start: &[usize]) -> Option<Vec<usize>> {
    let m = inst.m;
    let mut assign = start.to_vec();
    let mut load = vec![0usize; inst.n_groups() * m];
    for (i, a) in assign.iter_mut().enumerate() {
        if let Some(j) = fix.forced(i) {
            *a = j;
        }
        if fix.allowed(i, *a) {
            load[inst.group[i] * m + *a] += 1;
        } else {
            *a = UNASSIGNED;
        }
    }
    // Evict unforced queries from overloaded models.
    for (i, a) in assign.iter_mut().enumerate() {
        let g = inst.group[i];
        if *a != UNASSIGNED && fix.forced(i).is_none() && load[g * m + *a] > fix.cap(inst, g, *a) {
            load[g * m + *a] -= 1;
            *a = UNASSIGNED;
        }
    }
    for i in 0..inst.n {
        let g = inst.group[i];
        if assign[i] == UNASSIGNED {
            // Prefer models still short of their floor.
            let j =
                (0..m).filter(|&j| fix.allowed(i, j) && load[g * m + j] < fix.cap(inst, g, j)).max_by(|&a, &b| {
                    let short = |j: usize| load[g * m + j] < fix.load_min(j);
                    short(a).cmp(&short(b)).then(inst.score(i, a).total_cmp(&inst.score(i, b)))
                })?;
            assign[i] = j;
            load[g * m + j] += 1;
        } else if load[g * m + assign[i]] > fix.cap(inst, g, assign[i]) {
            return None;
        }
    }
    if fix.has_load_floor() {
        if inst.n_groups() != 1 {
            return None;
        }
        // Pull queries onto models below their floor, losing as little score
        // as possible.
        for j in 0..m {
            while load[j] < fix.load_min(j) {
                let q = (0..inst.n)
                    .filter(|&q| {
                        let k = assign[q];
                        k != j && fix.forced(q).is_none() && fix.allowed(q, j) && load[k] > fix.load_min(k)
                    })
                    .max_by(|&a, &b| {
                        let d = |q: usize| inst.score(q, j) - inst.score(q, assign[q]);
                        d(a).total_cmp(&d(b)).then(b.cmp(&a))
                    })?;
                load[assign[q]] -= 1;
                assign[q] = j;
                load[j] += 1;
            }
        }
    }
    Some(assign)
}

const MAX_CANCELLATIONS_PER_MODEL: usize = 64;
const CYCLE_EPS: f64 = 1e-12;

/// Improves a feasible transportation point to optimality by canceling
/// positive-gain cycles in the model graph of each group. The graph has one
/// node per model plus a slack node: `j -> k` moves the best query from `j`
/// to `k`, `k -> slack` uses spare capacity at `k`, and `slack -> j` frees a
/// slot at `j`. Returns `Ok(None)` if the iteration cap is hit.
/// A node on a cycle of the predecessor graph, if there is one.
fn pred_cycle(pred: &[usize], stamp: &mut [usize]) -> usize {
    stamp.iter_mut().for_each(|s| *s = UNASSIGNED);
    for start in 0..pred.len() {
        let mut x = start;
        while x != UNASSIGNED && stamp[x] == UNASSIGNED {
            stamp[x] = start;
            x = pred[x];
        }
        if x != UNASSIGNED && stamp[x] == start {
            return x;
        }
    }
    UNASSIGNED
}

fn cancel_cycles(
    inst: &Instance,
    fix: &Fixings,
    wt: Weights,
    mut assign: Vec<usize>,
    limit: usize,
) -> Result<Option<Vec<usize>>, RelaxError> {
    let m = inst.m;
    let v = m + 1;
    let slack = m;
    let mut wv = vec![f64::NEG_INFINITY; inst.n * m];
    for i in 0..inst.n {
        for j in 0..m {
            if fix.allowed(i, j) {
                wv[i * m + j] = wt.eval(inst, i, j);
            }
        }
    }
    let w = |i: usize, j: usize| wv[i * m + j];
    let mut dist = vec![0.0; v];
    let mut pred = vec![UNASSIGNED; v];
    let mut stamp = vec![UNASSIGNED; v];
    for g in 0..inst.n_groups() {
        let caps: Vec<usize> = (0..m).map(|j| fix.cap(inst, g, j)).collect();
        let floor: Vec<usize> = (0..m).map(|j| fix.load_min(j)).collect();
        let mut at: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut load = vec![0usize; m];
        for &i in inst.members(g) {
            load[assign[i]] += 1;
            if fix.forced(i).is_none() {
                at[assign[i]].push(i);
            }
        }
        // best[j * m + k] = (gain, query) of the best single move j -> k.
        let mut best = vec![(f64::NEG_INFINITY, UNASSIGNED); m * m];
        let offer = |best: &mut [(f64, usize)], j: usize, k: usize, q: usize| {
            let gain = w(q, k) - w(q, j);
            let b = &mut best[j * m + k];
            if gain > b.0 || (gain == b.0 && q < b.1) {
                *b = (gain, q);
            }
        };
        for j in 0..m {
            for &q in &at[j] {
                for k in (0..m).filter(|&k| k != j) {
                    offer(&mut best, j, k, q);
                }
            }
        }

        let mut canceled = 0;
        loop {
            dist.iter_mut().for_each(|d| *d = 0.0);
            pred.iter_mut().for_each(|p| *p = UNASSIGNED);
            let mut on_cycle = UNASSIGNED;
            for _ in 0..v {
                let mut updated = false;
                for j in 0..m {
                    let dj = dist[j];
                    for k in 0..m {
                        let gain = best[j * m + k].0;
                        if gain > f64::NEG_INFINITY && dj + gain > dist[k] + CYCLE_EPS {
                            dist[k] = dj + gain;
                            pred[k] = j;
                            updated = true;
                        }
                    }
                    if load[j] < caps[j] && dj > dist[slack] + CYCLE_EPS {
                        dist[slack] = dj;
                        pred[slack] = j;
                        updated = true;
                    }
                }
                let ds = dist[slack];
                for k in 0..m {
                    if load[k] > floor[k] && ds > dist[k] + CYCLE_EPS {
                        dist[k] = ds;
                        pred[k] = slack;
                        updated = true;
                    }
                }
                if !updated {
                    break;
                }
                on_cycle = pred_cycle(&pred, &mut stamp);
                if on_cycle != UNASSIGNED {
                    break;
                }
            }
            if on_cycle == UNASSIGNED {
                break;
            }
            let x = on_cycle;
            let mut cycle = vec![x];
            let mut y = pred[x];
            while y != x {
                cycle.push(y);
                y = pred[y];
                if cycle.len() > v {
                    return Err(RelaxError::Numerical("cycle trace did not close".into()));
                }
            }
            // `cycle` lists nodes against the edge direction.
            cycle.reverse();
            let gain: f64 = (0..cycle.len())
                .map(|t| {
                    let (a, b) = (cycle[t], cycle[(t + 1) % cycle.len()]);
                    if a == slack || b == slack {
                        0.0
                    } else {
                        best[a * m + b].0
                    }
                })
                .sum();
            if gain <= CYCLE_EPS {
                break;
            }
            let mut moves = Vec::with_capacity(cycle.len());
            for t in 0..cycle.len() {
                let (a, b) = (cycle[t], cycle[(t + 1) % cycle.len()]);
                if a != slack && b != slack {
                    moves.push((best[a * m + b].1, a, b));
                }
            }
            for &(q, a, b) in &moves {
                assign[q] = b;
                load[a] -= 1;
                load[b] += 1;
                let pos = at[a].iter().position(|&x| x == q).expect("query listed at its model");
                at[a].swap_remove(pos);
                at[b].push(q);
                for k in (0..m).filter(|&k| k != a) {
                    if best[a * m + k].1 == q {
                        best[a * m + k] = (f64::NEG_INFINITY, UNASSIGNED);
                        for &r in &at[a] {
                            offer(&mut best, a, k, r);
                        }
                    }
                }
                for k in (0..m).filter(|&k| k != b) {
                    offer(&mut best, b, k, q);
                }
            }
            canceled += 1;
            if canceled > limit {
                return Ok(None);
            }
        }
    }
    Ok(Some(assign))
}

fn apply(assign: &mut [usize], moves: &[(usize, usize, usize)]) {
    for &(q, from, to) in moves {
        debug_assert_eq!(assign[q], from);
        assign[q] = to;
    }
}

/// Splits the difference between two assignments into paths (which shift one
/// unit of load between models) and cycles (which shift none), per group.
/// Applying any subset of components to `from` keeps capacities satisfied
/// whenever both endpoints satisfy them.
pub(crate) fn decompose(inst: &Instance, from: &[usize], to: &[usize]) -> Vec<Component> {
    let m = inst.m;
    let mut out = Vec::new();
    for g in 0..inst.n_groups() {
        // out_edges[j]: moves leaving model j, in query order.
        let mut out_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
        let mut net = vec![0i64; m];
        for &i in inst.members(g) {
            if from[i] != to[i] {
                out_edges[from[i]].push((i, to[i]));
                net[from[i]] -= 1;
                net[to[i]] += 1;
            }
        }
        for e in &mut out_edges {
            e.reverse();
        }
        // Paths: start where load drops, stop where load grows.
        let mut deficit: Vec<i64> = net.iter().map(|&d| (-d).max(0)).collect();
        let mut surplus: Vec<i64> = net.iter().map(|&d| d.max(0)).collect();
        while let Some(start) = (0..m).find(|&j| deficit[j] > 0) {
            deficit[start] -= 1;
            walk(start, true, &mut out_edges, &mut surplus, inst, &mut out);
        }
        // Remaining edges are balanced and form cycles.
        while let Some(start) = (0..m).find(|&j| !out_edges[j].is_empty()) {
            walk(start, false, &mut out_edges, &mut surplus, inst, &mut out);
        }
    }
    out
}

fn walk(
    start: usize,
    path_mode: bool,
    out_edges: &mut [Vec<(usize, usize)>],
    surplus: &mut [i64],
    inst: &Instance,
    out: &mut Vec<Component>,
) {
    // nodes[k] is the model reached after k moves.
    let mut nodes = vec![start];
    let mut moves: Vec<(usize, usize, usize)> = Vec::new();
    let mut cur = start;
    loop {
        let Some((q, next)) = out_edges[cur].pop() else {
            debug_assert!(moves.is_empty(), "walk stranded at model {cur}");
            if !moves.is_empty() {
                out.push(component(inst, moves));
            }
            return;
        };
        moves.push((q, cur, next));
        if path_mode && surplus[next] > 0 {
            surplus[next] -= 1;
            out.push(component(inst, moves));
            return;
        }
        if let Some(pos) = nodes.iter().position(|&v| v == next) {
            let cycle = moves.split_off(pos);
            nodes.truncate(pos + 1);
            out.push(component(inst, cycle));
            if !path_mode && moves.is_empty() {
                return;
            }
        } else {
            nodes.push(next);
        }
        cur = next;
    }
}

fn component(inst: &Instance, moves: Vec<(usize, usize, usize)>) -> Component {
    let dcost = moves.iter().map(|&(_, f, t)| inst.costs[t] - inst.costs[f]).sum();
    let dval = moves.iter().map(|&(q, f, t)| inst.score(q, t) - inst.score(q, f)).sum();
    Component { moves, dcost, dval }
}

#[derive(Clone, Copy, PartialEq)]
struct Key(f64, Reverse<usize>);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Maximum-weight assignment of every query to an allowed model within each
/// group's capacities, by successive shortest augmenting paths over the model
/// graph (Dijkstra with node potentials). Returns `Ok(None)` when no
/// assignment exists.
///
/// In min-cost form a path enters model `k` from the new query at cost
/// `-w[i][k]`, hops `j -> k` by moving some query `q` at cost
/// `w[q][j] - w[q][k]`, and ends at any model with spare capacity.
pub(crate) fn transport<W>(inst: &Instance, fix: &Fixings, weight: W) -> Result<Option<Vec<usize>>, RelaxError>
where
    W: Fn(usize, usize) -> f64,
{
    let m = inst.m;
    let mut assign = vec![UNASSIGNED; inst.n];
    let mut w = vec![f64::NEG_INFINITY; inst.n * m];
    for i in 0..inst.n {
        for j in 0..m {
            if fix.allowed(i, j) {
                w[i * m + j] = weight(i, j);
            }
        }
    }

    let mut dist = vec![0.0; m];
    let mut done = vec![false; m];
    let mut pred: Vec<Option<(usize, usize)>> = vec![None; m];
    for g in 0..inst.n_groups() {
        let caps: Vec<usize> = (0..m).map(|j| fix.cap(inst, g, j)).collect();
        let mut load = vec![0usize; m];
        // heaps[j * m + k]: queries at j ranked by the gain of moving to k.
        let mut heaps: Vec<BinaryHeap<Key>> = vec![BinaryHeap::new(); m * m];
        // Potentials of the model nodes and of the sink.
        let mut pot = vec![0.0; m];
        let mut pot_sink = 0.0;

        for &i in inst.members(g) {
            if let Some(j) = fix.forced(i) {
                if !fix.allowed(i, j) {
                    return Ok(None);
                }
                assign[i] = j;
                load[j] += 1;
                if load[j] > caps[j] {
                    return Ok(None);
                }
            }
        }

        for &i in inst.members(g) {
            if assign[i] != UNASSIGNED {
                continue;
            }
            let row = &w[i * m..(i + 1) * m];
            let entry = (0..m)
                .filter(|&k| row[k] > f64::NEG_INFINITY)
                .map(|k| row[k] + pot[k])
                .fold(f64::NEG_INFINITY, f64::max);
            if entry == f64::NEG_INFINITY {
                return Ok(None);
            }
            for k in 0..m {
                dist[k] = if row[k] > f64::NEG_INFINITY { (entry - row[k] - pot[k]).max(0.0) } else { f64::INFINITY };
                done[k] = false;
                pred[k] = None;
            }
            let mut sink_dist = f64::INFINITY;
            let mut sink_pred = UNASSIGNED;
            loop {
                let mut j = UNASSIGNED;
                let mut best = f64::INFINITY;
                for k in 0..m {
                    if !done[k] && dist[k] < best {
                        best = dist[k];
                        j = k;
                    }
                }
                if j == UNASSIGNED || sink_dist <= best {
                    break;
                }
                done[j] = true;
                if load[j] < caps[j] {
                    let d = best + (pot[j] - pot_sink).max(0.0);
                    if d < sink_dist {
                        sink_dist = d;
                        sink_pred = j;
                    }
                }
                for k in 0..m {
                    if done[k] {
                        continue;
                    }
                    let heap = &mut heaps[j * m + k];
                    let top = loop {
                        match heap.peek() {
                            Some(&Key(gain, Reverse(q))) if assign[q] == j => break Some((gain, q)),
                            Some(_) => {
                                heap.pop();
                            }
                            None => break None,
                        }
                    };
                    if let Some((gain, q)) = top {
                        let d = best + (-gain + pot[j] - pot[k]).max(0.0);
                        if d < dist[k] {
                            dist[k] = d;
                            pred[k] = Some((j, q));
                        }
                    }
                }
            }
            if sink_pred == UNASSIGNED {
                return Ok(None);
            }

            for k in 0..m {
                pot[k] += if done[k] { dist[k] } else { sink_dist };
            }
            pot_sink += sink_dist;

            let end = sink_pred;
            let mut cur = end;
            let mut chain = Vec::new();
            while let Some((j, q)) = pred[cur] {
                chain.push((q, j, cur));
                cur = j;
                if chain.len() > m {
                    return Err(RelaxError::Numerical("cycle in augmenting path".into()));
                }
            }
            for &(q, _, to) in &chain {
                assign[q] = to;
                push_moves(&mut heaps, &w, q, to, m);
            }
            assign[i] = cur;
            push_moves(&mut heaps, &w, i, cur, m);
            load[end] += 1;
        }
    }
    Ok(Some(assign))
}

fn push_moves(heaps: &mut [BinaryHeap<Key>], w: &[f64], q: usize, at: usize, m: usize) {
    let row = &w[q * m..(q + 1) * m];
    for k in 0..m {
        if k != at && row[k] > f64::NEG_INFINITY {
            heaps[at * m + k].push(Key(row[k] - row[at], Reverse(q)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, ScoreMatrix};

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

    fn brute_transport(inst: &Instance, w: impl Fn(usize, usize) -> f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        let mut a = vec![0usize; inst.n];
        loop {
            let loads = inst.loads(&a);
            if loads.iter().zip(&inst.caps).all(|(l, c)| l.iter().zip(c).all(|(x, y)| x <= y)) {
                let v: f64 = a.iter().enumerate().map(|(i, &j)| w(i, j)).sum();
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
            let mut i = 0;
            loop {
                if i == inst.n {
                    return best;
                }
                a[i] += 1;
                if a[i] < inst.m {
                    break;
                }
                a[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn slack_relaxation_is_row_argmax() {
        let p = problem(&[vec![0.2, 0.9], vec![0.7, 0.1]], &[1.0, 2.0], &[None, None], f64::INFINITY);
        let r = solve_relaxation(&p, &Fixings::none(2, 2)).unwrap();
        assert!(r.is_integral());
        assert_eq!(r.fractional_assignment(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!((r.bound - 0.8).abs() < 1e-12);
    }

    #[test]
    fn fixing_zero_moves_mass_to_next_best() {
        let p = problem(&[vec![0.9, 0.5, 0.7]], &[0.0; 3], &[None, None, None], 1.0);
        let mut fix = Fixings::none(1, 3);
        fix.fix_zero(0, 0);
        let r = solve_relaxation(&p, &fix).unwrap();
        assert_eq!(r.row(0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn all_models_excluded_is_infeasible() {
        let p = problem(&[vec![0.9, 0.5]], &[0.0; 2], &[None, None], 1.0);
        let mut fix = Fixings::none(1, 2);
        fix.fix_zero(0, 0);
        fix.fix_zero(0, 1);
        assert_eq!(solve_relaxation(&p, &fix), Err(RelaxError::Infeasible));
    }

    #[test]
    fn budget_below_cheapest_is_infeasible() {
        let p = problem(&[vec![0.9, 0.5]], &[2.0, 1.0], &[None, None], 0.5);
        assert_eq!(solve_relaxation(&p, &Fixings::none(1, 2)), Err(RelaxError::Infeasible));
    }

    #[test]
    fn transport_matches_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.gen_range(1..=6);
            let m = rng.gen_range(1..=4);
            let scores: Vec<f64> = (0..n * m).map(|_| rng.gen()).collect();
            let caps: Vec<usize> = (0..m).map(|_| rng.gen_range(0..=n)).collect();
            let inst = Instance::new(scores, vec![0.0; m], vec![0; n], vec![caps], f64::INFINITY);
            let fix = Fixings::none(n, m);
            let got = transport(&inst, &fix, |i, j| inst.score(i, j)).unwrap();
            let want = brute_transport(&inst, |i, j| inst.score(i, j));
            match (got, want) {
                (Some(a), Some(v)) => {
                    assert!(inst.is_feasible(&a));
                    assert!((inst.value(&a) - v).abs() < 1e-9, "{} vs {v}", inst.value(&a));
                }
                (None, None) => {}
                (g, w) => panic!("feasibility disagreement: {g:?} vs {w:?}"),
            }
        }
    }

    #[test]
    fn decomposition_components_reassemble() {
        let inst = Instance::new(vec![0.5; 6 * 3], vec![1.0, 2.0, 3.0], vec![0; 6], vec![vec![6, 6, 6]], 100.0);
        let from = vec![0, 0, 1, 2, 1, 0];
        let to = vec![1, 2, 0, 2, 2, 1];
        let comps = decompose(&inst, &from, &to);
        let mut a = from.clone();
        for c in &comps {
            apply(&mut a, &c.moves);
        }
        assert_eq!(a, to);
        let total: f64 = comps.iter().map(|c| c.dcost).sum();
        assert!((total - (inst.cost(&to) - inst.cost(&from))).abs() < 1e-12);
    }
}
