//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use batchroute::alloc::{brute_force_allocation, evaluate_fixed_allocation, solve_allocation};
use batchroute::estimator::{
    bootstrap_fit, fit_knn, interval_predict, interval_predict_matrix, pi_risk_report, predict, QuantileConfig, Side,
};
use batchroute::router::{brute_force, robustify, route_per_query, solve_batch, SolverOptions};
use batchroute::simkit::{make_adversarial_batches, pick_costs, run_batch_experiment, sweep_per_query};
use batchroute::{
    validate_assignment, validate_solution, AllocError, BatchProblem, ModelSpec, RouterParams, ScoreMatrix,
    SolveStatus, COST_TOLERANCE,
};
use rand::Rng;

/// Objective agreement with exhaustive oracles.
const OBJECTIVE_TOL: f64 = 1e-9;
/// Wall-clock cap for the whole oracle suite.
const ORACLE_SUITE_LIMIT: Duration = Duration::from_secs(60);
/// Certified gap and median wall time required at N = 400, M = 20.
const THROUGHPUT_GAP: f64 = 1e-6;
const THROUGHPUT_MEDIAN: Duration = Duration::from_secs(2);
const PROPERTY_TRIALS: usize = 1000;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn oracle_exactness() -> Check {
    let started = Instant::now();
    let mut rng = common::rng(101);
    let (mut infeasible, mut matched) = (0, 0);
    for t in 0..500 {
        let p = common::batch_problem(&mut rng, 8, 4);
        let got = solve_batch(&p, &SolverOptions::default()).map_err(|e| format!("instance {t}: {e}"))?;
        let want = brute_force(&p).map_err(|e| format!("instance {t}: {e}"))?;
        let got_inf = got.status == SolveStatus::Infeasible;
        ensure(got_inf == (want.status == SolveStatus::Infeasible), || format!("instance {t}: feasibility differs"))?;
        if got_inf {
            infeasible += 1;
        } else {
            ensure((got.objective - want.objective).abs() <= OBJECTIVE_TOL, || {
                format!("instance {t}: {} vs {}", got.objective, want.objective)
            })?;
        }
        matched += 1;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < ORACLE_SUITE_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!("{matched}/500 match ({infeasible} infeasible) in {:.2}s", elapsed.as_secs_f64()))
}

fn hard_budget_control() -> Check {
    let mut rng = common::rng(102);
    let data = common::two_tier(&mut rng, 10_000);
    let lambda = 30.0;
    let plan = make_adversarial_batches(data.scores.rows(), 100, &pick_costs(&data.scores, &data.models, lambda));
    let (_, pq) = sweep_per_query(&plan, &data, &[lambda]).remove(0);
    let std = pq.aggregates.cost_std();
    ensure(std > 0.0, || "per-query cost std is 0".into())?;
    let cap = pq.aggregates.max_batch_cost;
    let (_, batch) = run_batch_experiment(&plan, &data, &[cap], &SolverOptions::default()).remove(0);
    let violations = batch.per_batch.iter().filter(|r| r.avg_cost.is_none_or(|c| c > cap + COST_TOLERANCE)).count();
    ensure(batch.per_batch.len() == 100, || format!("{} batches", batch.per_batch.len()))?;
    ensure(violations == 0, || format!("{violations} batches over budget or unrouted"))?;
    Ok(format!("per-query cost std {std:.3e}; batch routing at C={cap:.5}: 0/100 violations"))
}

fn dominance() -> Check {
    let mut rng = common::rng(103);
    let (mut trials, mut strict) = (0, 0);
    while trials < 50 {
        let n = rng.gen_range(4..=30);
        let m = rng.gen_range(2..=5);
        let models: Vec<ModelSpec> = (0..m)
            .map(|j| {
                let cost = rng.gen_range(0..100) as f64 / 1e4;
                if rng.gen_bool(0.5) {
                    ModelSpec::cloud(format!("m{}", j + 1), cost)
                } else {
                    ModelSpec::new(format!("m{}", j + 1), cost, 1, 2).with_instances(rng.gen_range(0..=n as u32))
                }
            })
            .collect();
        let params = RouterParams::new(rng.gen_range(0.0..200.0)).unwrap();
        let batches: Vec<ScoreMatrix> = (0..4).map(|_| common::scores(&mut rng, n, m)).collect();
        let picks: Vec<Vec<usize>> = batches.iter().map(|s| route_per_query(s, &models, &params)).collect();
        let spend = |a: &[usize]| a.iter().map(|&j| models[j].cost).sum::<f64>() / n as f64;
        let cap = picks.iter().map(|a| spend(a)).fold(0.0, f64::max);
        for (scores, a) in batches.into_iter().zip(&picks) {
            let p = BatchProblem::new(scores, models.clone(), cap);
            if !validate_assignment(&p, a).is_empty() {
                continue;
            }
            trials += 1;
            let (per_query, _) = p.evaluate(a);
            let sol = solve_batch(&p, &SolverOptions::default()).map_err(|e| e.to_string())?;
            ensure(sol.status.is_solved() && sol.objective >= per_query - 1e-12, || {
                format!("trial {trials}: batch {} < per-query {per_query}", sol.objective)
            })?;
            if sol.objective > per_query + OBJECTIVE_TOL {
                strict += 1;
            }
        }
    }
    ensure(strict >= 1, || "no strict improvement".into())?;
    Ok(format!("{trials}/{trials} trials batch >= per-query, {strict} strictly better"))
}

fn robust_equivalence() -> Check {
    let mut rng = common::rng(104);
    for t in 0..100 {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=3);
        let iv = common::intervals(&mut rng, n, m);
        let models = common::models(&mut rng, n, m);
        let p = BatchProblem::new(robustify(&iv), models, rng.gen_range(0.0..0.01));
        let sol = solve_batch(&p, &SolverOptions::default()).map_err(|e| e.to_string())?;
        // Full enumeration of the worst case over the box: for a fixed
        // assignment the minimum puts each chosen cell at its lower bound.
        let worst = |a: &[usize]| a.iter().enumerate().map(|(i, &j)| iv.lower().get(i, j)).sum::<f64>() / n as f64;
        let mut best = f64::NEG_INFINITY;
        let mut a = vec![0; n];
        loop {
            if validate_assignment(&p, &a).is_empty() {
                best = best.max(worst(&a));
            }
            let Some(k) = (0..n).find(|&k| a[k] + 1 < m) else { break };
            a[k] += 1;
            a[..k].iter_mut().for_each(|v| *v = 0);
        }
        let ok = if best == f64::NEG_INFINITY {
            sol.status == SolveStatus::Infeasible
        } else {
            sol.status == SolveStatus::Optimal && (sol.objective - best).abs() <= 1e-12
        };
        ensure(ok, || format!("instance {t}: {} vs {best}", sol.objective))?;
    }
    Ok("100/100 exact".into())
}

fn allocation_optimality() -> Check {
    let mut rng = common::rng(105);
    let opts = SolverOptions::default();
    for t in 0..50 {
        let b = rng.gen_range(1..=2);
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=3);
        let p = common::allocation_problem(&mut rng, b, n, m, 6);
        match (solve_allocation(&p, &opts), brute_force_allocation(&p)) {
            (Ok(g), Ok(w)) => ensure((g.objective - w.objective).abs() <= OBJECTIVE_TOL, || {
                format!("small instance {t}: {} vs {}", g.objective, w.objective)
            })?,
            (Err(AllocError::Infeasible), Err(AllocError::Infeasible)) => {}
            (g, w) => return Err(format!("small instance {t}: {g:?} vs {w:?}")),
        }
    }
    let mut compared = 0;
    for t in 0..200 {
        let p = common::allocation_problem(&mut rng, 3, 8, 4, 12);
        let best = match solve_allocation(&p, &opts) {
            Ok(s) => s.objective,
            Err(AllocError::Infeasible) => f64::NEG_INFINITY,
            Err(e) => return Err(format!("large instance {t}: {e}")),
        };
        for i in 0..=p.gpu_budget as u32 {
            match evaluate_fixed_allocation(i, &p, &opts) {
                Ok(u) => {
                    compared += 1;
                    ensure(best >= u.objective - OBJECTIVE_TOL, || {
                        format!("large instance {t}: uniform {i} gives {} > {best}", u.objective)
                    })?;
                }
                Err(AllocError::GpuBudgetExceeded { .. }) => break,
                Err(AllocError::Infeasible) => {}
                Err(e) => return Err(format!("large instance {t}: {e}")),
            }
        }
    }
    Ok(format!("50/50 match enumeration; 200/200 beat all {compared} feasible uniform allocations"))
}

/// A random training set and query of dimension 2..=6.
fn train_set(rng: &mut impl Rng) -> (Vec<Vec<f64>>, ScoreMatrix, Vec<f64>) {
    let d = rng.gen_range(2..=6);
    let n = rng.gen_range(3..=15);
    let m = rng.gen_range(1..=3);
    let vector = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        v[0] += 2.0;
        v
    };
    let emb: Vec<Vec<f64>> = (0..n).map(|_| vector(rng)).collect();
    let scores = common::scores(rng, n, m);
    (emb, scores, vector(rng))
}

fn estimator_properties() -> Check {
    let mut rng = common::rng(106);
    for t in 0..PROPERTY_TRIALS {
        let (emb, scores, q) = train_set(&mut rng);
        let k = rng.gen_range(1..=emb.len().min(4));
        let ens = bootstrap_fit(&emb, &scores, k, rng.gen_range(2..30), rng.gen()).map_err(|e| e.to_string())?;
        let (q1, q2): (f64, f64) = (rng.gen_range(0.5..99.5), rng.gen_range(0.5..99.5));
        let a = interval_predict(&ens, &q, QuantileConfig::new(q1.min(q2), Side::Both).unwrap()).unwrap();
        let b = interval_predict(&ens, &q, QuantileConfig::new(q1.max(q2), Side::Both).unwrap()).unwrap();
        ensure(a.lower.iter().zip(&b.lower).all(|(x, y)| x <= y), || format!("monotonicity, trial {t}"))?;
    }
    for t in 0..PROPERTY_TRIALS {
        let (emb, scores, q) = train_set(&mut rng);
        let ens = bootstrap_fit(&emb, &scores, rng.gen_range(1..=emb.len().min(4)), rng.gen_range(2..30), rng.gen())
            .map_err(|e| e.to_string())?;
        let level = rng.gen_range(0.5..=50.0);
        let iv = interval_predict(&ens, &q, QuantileConfig::new(level, Side::Both).unwrap()).unwrap();
        let members = ens.member_predictions(&q).unwrap();
        for j in 0..iv.lower.len() {
            let lo = members.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
            ensure(lo <= iv.lower[j] && iv.lower[j] <= iv.upper[j] && iv.upper[j] <= hi, || {
                format!("sandwich, trial {t}")
            })?;
        }
    }
    for t in 0..PROPERTY_TRIALS {
        let (emb, scores, q) = train_set(&mut rng);
        let (k, r, seed) = (rng.gen_range(1..=emb.len().min(4)), rng.gen_range(2..20), rng.gen());
        let a = bootstrap_fit(&emb, &scores, k, r, seed).unwrap();
        let b = bootstrap_fit(&emb, &scores, k, r, seed).unwrap();
        let qc = QuantileConfig::default();
        ensure(a == b && interval_predict(&a, &q, qc) == interval_predict(&b, &q, qc), || {
            format!("determinism, trial {t}")
        })?;
    }
    for t in 0..PROPERTY_TRIALS {
        let (emb, scores, q) = train_set(&mut rng);
        let model = fit_knn(&emb, &scores, rng.gen_range(1..=emb.len().min(4))).unwrap();
        let s: f64 = if rng.gen_bool(0.5) { rng.gen_range(1e-3..1.0) } else { rng.gen_range(1.0..1e3) };
        let scaled: Vec<f64> = q.iter().map(|v| v * s).collect();
        ensure(
            model.neighbors(&q).unwrap() == model.neighbors(&scaled).unwrap()
                && predict(&model, &q).unwrap() == predict(&model, &scaled).unwrap(),
            || format!("scale invariance, trial {t}"),
        )?;
    }
    let mut recovered = 0;
    for _ in 0..100 {
        let (emb, scores, _) = train_set(&mut rng);
        let model = fit_knn(&emb, &scores, 1).unwrap();
        for (t, e) in emb.iter().enumerate() {
            ensure(predict(&model, e).unwrap() == scores.row(t), || format!("k=1 recovery, row {t}"))?;
            recovered += 1;
        }
    }
    Ok(format!("4 x {PROPERTY_TRIALS} property trials pass; k=1 recovers {recovered}/{recovered} rows exactly"))
}

fn risk_report() -> Check {
    let mut rng = common::rng(107);
    let h = common::heteroscedastic(&mut rng, 400, 300, 8);
    let ens = bootstrap_fit(&h.train_embeddings, &h.train_scores, 40, 100, 7).map_err(|e| e.to_string())?;
    let (iv, point) =
        interval_predict_matrix(&ens, &h.query_ids, &h.query_embeddings, QuantileConfig::default()).unwrap();
    let models = [ModelSpec::cloud("volatile", 0.0), ModelSpec::cloud("steady", 0.0)];
    let params = RouterParams::new(0.0).unwrap();
    let point_picks = route_per_query(&point, &models, &params);
    let robust_picks = route_per_query(&robustify(&iv), &models, &params);
    let r = pi_risk_report(&point_picks, &robust_picks, &iv).map_err(|e| e.to_string())?;
    let detail = format!("longer {:.1}% / equal {:.1}% / shorter {:.1}%", r.longer, r.equal, r.shorter);
    ensure(r.longer > r.shorter, || detail.clone())?;
    Ok(detail)
}

fn throughput() -> Check {
    let mut rng = common::rng(108);
    let opts = SolverOptions::default().with_time_limit(Duration::from_secs(30));
    let mut times = Vec::new();
    for t in 0..20 {
        let (n, m) = (400, 20);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.gen()).collect()).collect();
        let models: Vec<ModelSpec> = (0..m)
            .map(|j| {
                let c: f64 = rng.gen();
                if j == 0 || rng.gen_bool(0.3) {
                    ModelSpec::cloud(format!("m{}", j + 1), c)
                } else {
                    ModelSpec::new(format!("m{}", j + 1), c, 1, 1).with_instances(rng.gen_range(0..=2 * n / m) as u32)
                }
            })
            .collect();
        // Feasible by construction: everything can go to the cheapest cloud model.
        let min = models.iter().filter(|s| s.is_cloud()).map(|s| s.cost).fold(f64::INFINITY, f64::min);
        let max = models.iter().map(|s| s.cost).fold(0.0, f64::max);
        let budget = min + rng.gen::<f64>() * (max - min) * 0.6;
        let p = BatchProblem::new(ScoreMatrix::from_rows(&rows).unwrap(), models, budget);
        let started = Instant::now();
        let sol = solve_batch(&p, &opts).map_err(|e| format!("instance {t}: {e}"))?;
        times.push(started.elapsed());
        ensure(sol.status.is_solved() && sol.gap <= THROUGHPUT_GAP, || {
            format!("instance {t}: status {} gap {:e}", sol.status, sol.gap)
        })?;
        ensure(validate_solution(&p, &sol).is_empty(), || format!("instance {t}: invalid solution"))?;
    }
    times.sort();
    let median = (times[9] + times[10]) / 2;
    let detail = format!(
        "median {:.3}s, max {:.3}s, all gaps <= {THROUGHPUT_GAP:e}",
        median.as_secs_f64(),
        times[19].as_secs_f64()
    );
    ensure(median < THROUGHPUT_MEDIAN, || detail.clone())?;
    Ok(detail)
}

fn write_matrix(path: &std::path::Path, m: &ScoreMatrix) {
    let mut s = format!("query_id,{}\n", m.cols().join(","));
    for (i, id) in m.rows().iter().enumerate() {
        let row: Vec<String> = m.row(i).iter().map(f64::to_string).collect();
        s.push_str(&format!("{id},{}\n", row.join(",")));
    }
    std::fs::write(path, s).unwrap();
}

fn end_to_end_determinism() -> Check {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let mut rng = common::rng(109);
    let data = common::two_tier(&mut rng, 2000);
    write_matrix(&dir.path().join("scores.csv"), &data.scores);
    write_matrix(&dir.path().join("truth.csv"), data.truth.as_ref().unwrap());
    batchroute::io::save_models(&dir.path().join("models.json"), &data.models).map_err(|e| e.to_string())?;
    std::fs::write(
        dir.path().join("sim.cfg"),
        "models = models.json\nscores = scores.csv\ntruth = truth.csv\nmethod = batch\nscheme = random\nseed = 11\n\
         batch_size = 100\nlambda_grid = 10, 30\nbudget_grid = 0.002, per_query_max\n",
    )
    .unwrap();
    let run = |out: &str| {
        Command::new(env!("CARGO_BIN_EXE_batchroute"))
            .args(["simulate", "--config", "sim.cfg", "--out", out])
            .current_dir(dir.path())
            .status()
            .map_err(|e| e.to_string())
    };
    for out in ["a.csv", "b.csv"] {
        let status = run(out)?;
        ensure(status.success(), || format!("simulate exited with {status}"))?;
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    ensure(a == b, || "reports differ".into())?;
    ensure(a.starts_with(batchroute::io::REPORT_HEADER.as_bytes()), || "missing report header".into())?;
    Ok(format!("two runs, {} identical bytes", a.len()))
}

type Criterion = fn() -> Check;

fn main() -> ExitCode {
    let checks: [(&str, Criterion); 9] = [
        ("oracle exactness", oracle_exactness),
        ("hard budget control", hard_budget_control),
        ("dominance over per-query routing", dominance),
        ("robust equivalence", robust_equivalence),
        ("allocation optimality", allocation_optimality),
        ("estimator properties", estimator_properties),
        ("risk report", risk_report),
        ("throughput", throughput),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS AC{} {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL AC{} {name}: {detail}", k + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
