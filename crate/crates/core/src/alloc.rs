//! Offline choice of instance counts for self-hosted models.
//!
//! Given calibration batches, a GPU budget and an average cost budget, pick
//! the number of instances `I_j` of every self-hosted model so that the best
//! routing of the calibration queries scores highest. Cloud models (zero GPUs
//! per instance) have unbounded capacity and take no part in the allocation.
//!
//! The cost budget is an average over *all* calibration queries, so a single
//! batch may spend more than the budget as long as others spend less. Online
//! routing afterwards enforces the budget per batch.

use crate::error::{AllocError, RelaxError};
use crate::model::{AllocationProblem, AllocationSolution, BatchRecord, ModelSpec, SolveStatus};
use crate::relax::{relax, total_budget, Fixings, Instance};
use crate::router::{branch_and_bound, enumerate_best, SolverOptions};

/// Per-model upper bound on instances: `floor(G / g_j)` for self-hosted
/// models, `None` for cloud models.
pub fn instance_upper_bounds(models: &[ModelSpec], gpu_budget: u64) -> Vec<Option<u32>> {
    models
        .iter()
        .map(|m| {
            if m.is_cloud() {
                None
            } else {
                Some((gpu_budget / u64::from(m.gpus_per_instance)).min(u64::from(u32::MAX)) as u32)
            }
        })
        .collect()
}

/// Routing of all calibration batches for a fixed instance vector.
struct Joint {
    inst: Instance,
    n: usize,
}

impl Joint {
    fn new(p: &AllocationProblem, instances: &[Option<u32>]) -> Self {
        let n = p.batch_size();
        let b = p.batches.len();
        let m = p.models.len();
        let mut scores = Vec::with_capacity(n * b * m);
        let mut group = Vec::with_capacity(n * b);
        for (g, batch) in p.batches.iter().enumerate() {
            scores.extend_from_slice(batch.values());
            group.extend(std::iter::repeat_n(g, batch.n_rows()));
        }
        let caps: Vec<usize> = p
            .models
            .iter()
            .zip(instances)
            .map(|(spec, i)| match i {
                None => n,
                Some(i) => (u64::from(spec.concurrency) * u64::from(*i)).min(n as u64) as usize,
            })
            .collect();
        let costs = p.models.iter().map(|s| s.cost).collect();
        let inst = Instance::new(scores, costs, group, vec![caps; b], total_budget(p.budget, n * b));
        Self { inst, n }
    }

    /// Optimistic value (total units) or `None` if the relaxation is
    /// infeasible.
    fn bound(&self) -> Result<Option<f64>, AllocError> {
        match relax(&self.inst, &Fixings::none(self.inst.n, self.inst.m)) {
            Ok(r) => Ok(Some(r.bound)),
            Err(RelaxError::Infeasible) => Ok(None),
            Err(e) => Err(AllocError::Solve(e.into())),
        }
    }

    fn records(&self, assign: &[usize]) -> Vec<BatchRecord> {
        assign
            .chunks(self.n)
            .enumerate()
            .map(|(g, chunk)| {
                let base = g * self.n;
                let objective =
                    chunk.iter().enumerate().map(|(i, &j)| self.inst.score(base + i, j)).sum::<f64>() / self.n as f64;
                let cost = chunk.iter().map(|&j| self.inst.costs[j]).sum::<f64>() / self.n as f64;
                BatchRecord { assignment: chunk.to_vec(), objective, realized_avg_cost: cost }
            })
            .collect()
    }
}

/// Exact routing value of a fixed instance vector.
struct Evaluated {
    value: f64,
    bound: f64,
    status: SolveStatus,
    assign: Vec<usize>,
}

fn evaluate(joint: &Joint, opts: &SolverOptions) -> Result<Option<Evaluated>, AllocError> {
    // The solver's gap tolerance is per query; the joint instance has B
    // times more queries, which `branch_and_bound` accounts for.
    Ok(branch_and_bound(&joint.inst, opts)?.map(|o| Evaluated {
        value: o.value,
        bound: o.bound,
        status: o.status,
        assign: o.assign,
    }))
}

/// Chooses instance counts maximizing the mean calibration score.
///
/// The search walks the models in order, trying instance counts from the
/// largest useful value down, and prunes a partial vector when the
/// relaxation with every undecided model at its largest affordable count
/// cannot beat the incumbent. Among equally good vectors the first one met
/// in that order is kept.
pub fn solve_allocation(p: &AllocationProblem, opts: &SolverOptions) -> Result<AllocationSolution, AllocError> {
    p.validate()?;
    let n = p.batch_size();
    let total = (n * p.batches.len()) as f64;
    let prune_tol = (opts.gap_tolerance * total).max(1e-10);
    let mut search = Search {
        p,
        opts,
        useful: useful_bounds(p),
        current: instance_upper_bounds(&p.models, p.gpu_budget),
        best: None,
        bound: f64::NEG_INFINITY,
        prune_tol,
    };
    search.descend(0, p.gpu_budget)?;
    let Search { best, bound, .. } = search;
    let (instances, eval, joint) = best.ok_or(AllocError::Infeasible)?;
    let bound = bound.max(eval.value);
    let status = if bound - eval.value <= prune_tol + 1e-9 && eval.status == SolveStatus::Optimal {
        SolveStatus::Optimal
    } else {
        SolveStatus::GapCertified
    };
    Ok(AllocationSolution {
        instances,
        objective: eval.value / total,
        bound: bound / total,
        status,
        per_batch: joint.records(&eval.assign),
    })
}

/// Largest instance count that can still add capacity: enough to serve a
/// whole batch, and affordable on its own.
fn useful_bounds(p: &AllocationProblem) -> Vec<Option<u32>> {
    let n = p.batch_size() as u64;
    instance_upper_bounds(&p.models, p.gpu_budget)
        .into_iter()
        .zip(&p.models)
        .map(|(ub, m)| ub.map(|ub| ub.min(n.div_ceil(u64::from(m.concurrency)).min(u64::from(u32::MAX)) as u32)))
        .collect()
}

type Best = Option<(Vec<Option<u32>>, Evaluated, Joint)>;

struct Search<'a> {
    p: &'a AllocationProblem,
    opts: &'a SolverOptions,
    useful: Vec<Option<u32>>,
    /// Decided counts for models before the cursor; optimistic counts after.
    current: Vec<Option<u32>>,
    best: Best,
    /// Largest bound among pruned or gap-certified vectors.
    bound: f64,
    prune_tol: f64,
}

impl Search<'_> {
    fn incumbent(&self) -> f64 {
        self.best.as_ref().map_or(f64::NEG_INFINITY, |(_, e, _)| e.value)
    }

    /// Sets every model from `j` on to its largest count affordable with
    /// `gpus_left` GPUs.
    fn optimistic_tail(&mut self, j: usize, gpus_left: u64) {
        for k in j..self.p.models.len() {
            if let Some(u) = self.useful[k] {
                let g = u64::from(self.p.models[k].gpus_per_instance);
                self.current[k] = Some(u.min((gpus_left / g).min(u64::from(u32::MAX)) as u32));
            }
        }
    }

    fn descend(&mut self, j: usize, gpus_left: u64) -> Result<(), AllocError> {
        let m = self.p.models.len();
        self.optimistic_tail(j, gpus_left);
        let joint = Joint::new(self.p, &self.current);
        let Some(bound) = joint.bound()? else {
            // Even the most generous completion cannot serve the batches.
            return Ok(());
        };
        if bound <= self.incumbent() + self.prune_tol {
            self.bound = self.bound.max(bound);
            return Ok(());
        }
        // Skip cloud models: they are not allocated.
        let mut j = j;
        while j < m && self.useful[j].is_none() {
            j += 1;
        }
        if j == m {
            if let Some(eval) = evaluate(&joint, self.opts)? {
                self.bound = self.bound.max(eval.bound);
                if eval.value > self.incumbent() + 1e-12 {
                    self.best = Some((self.current.clone(), eval, joint));
                }
            }
            return Ok(());
        }
        let g = u64::from(self.p.models[j].gpus_per_instance);
        let top = self.current[j].unwrap_or(0);
        for count in (0..=top).rev() {
            self.current[j] = Some(count);
            self.descend(j + 1, gpus_left - g * u64::from(count))?;
        }
        Ok(())
    }
}

/// Routes the calibration batches with `n` instances of every self-hosted
/// model, the uniform baseline that [`solve_allocation`] improves on.
pub fn evaluate_fixed_allocation(
    n_per_model: u32,
    p: &AllocationProblem,
    opts: &SolverOptions,
) -> Result<AllocationSolution, AllocError> {
    p.validate()?;
    let needed: u64 = p.models.iter().map(|m| u64::from(m.gpus_per_instance) * u64::from(n_per_model)).sum();
    if needed > p.gpu_budget {
        return Err(AllocError::GpuBudgetExceeded { n: n_per_model, needed, budget: p.gpu_budget });
    }
    let instances: Vec<Option<u32>> =
        p.models.iter().map(|m| if m.is_cloud() { None } else { Some(n_per_model) }).collect();
    let joint = Joint::new(p, &instances);
    let total = joint.inst.n as f64;
    let eval = evaluate(&joint, opts)?.ok_or(AllocError::Infeasible)?;
    Ok(AllocationSolution {
        instances,
        objective: eval.value / total,
        bound: eval.bound.max(eval.value) / total,
        status: eval.status,
        per_batch: joint.records(&eval.assign),
    })
}

/// Objective, instance counts, flat assignment and joint problem of the best
/// enumerated allocation.
type Candidate = (f64, Vec<Option<u32>>, Vec<usize>, Joint);

/// Exhaustive oracle: every instance vector within the GPU budget, each
/// routed by full enumeration of the joint assignment. Only for tiny
/// instances.
pub fn brute_force_allocation(p: &AllocationProblem) -> Result<AllocationSolution, AllocError> {
    p.validate()?;
    let ub = instance_upper_bounds(&p.models, p.gpu_budget);
    let mut best: Option<Candidate> = None;
    let mut current: Vec<Option<u32>> = ub.iter().map(|u| u.map(|_| 0)).collect();
    loop {
        let gpus: u64 = current
            .iter()
            .zip(&p.models)
            .map(|(i, m)| u64::from(i.unwrap_or(0)) * u64::from(m.gpus_per_instance))
            .sum();
        if gpus <= p.gpu_budget {
            let joint = Joint::new(p, &current);
            if let Some(a) = enumerate_best(&joint.inst) {
                let v = joint.inst.value(&a);
                if best.as_ref().is_none_or(|(bv, ..)| v > bv + 1e-12) {
                    best = Some((v, current.clone(), a, joint));
                }
            }
        }
        // Odometer over the self-hosted counts.
        let mut k = 0;
        loop {
            if k == current.len() {
                let (v, instances, a, joint) = best.ok_or(AllocError::Infeasible)?;
                let total = joint.inst.n as f64;
                return Ok(AllocationSolution {
                    instances,
                    objective: v / total,
                    bound: v / total,
                    status: SolveStatus::Optimal,
                    per_batch: joint.records(&a),
                });
            }
            match (current[k], ub[k]) {
                (Some(c), Some(u)) if c < u => {
                    current[k] = Some(c + 1);
                    break;
                }
                (Some(_), Some(_)) => {
                    current[k] = Some(0);
                    k += 1;
                }
                _ => k += 1,
            }
        }
    }
}
