//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use batchroute::{AllocationProblem, BatchProblem, IntervalMatrix, ModelSpec, ScoreMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Scores either uniform in `[0, 1]` or on a coarse grid (to provoke ties).
pub fn scores(rng: &mut impl Rng, n: usize, m: usize) -> ScoreMatrix {
    let grid = rng.gen_bool(0.3);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| if grid { f64::from(rng.gen_range(0..=4u8)) / 4.0 } else { rng.gen() }).collect())
        .collect();
    ScoreMatrix::from_rows(&rows).unwrap()
}

/// Mix of cloud and capacity-limited models.
pub fn models(rng: &mut impl Rng, n: usize, m: usize) -> Vec<ModelSpec> {
    (0..m)
        .map(|j| {
            let name = format!("m{}", j + 1);
            let cost = if rng.gen_bool(0.2) { 0.0 } else { (rng.gen::<f64>() * 100.0).round() / 10_000.0 };
            if rng.gen_bool(0.3) {
                ModelSpec::cloud(name, cost)
            } else {
                let conc = rng.gen_range(1..=2);
                ModelSpec::new(name, cost, 1, conc).with_instances(rng.gen_range(n as u32 / 2..=n as u32))
            }
        })
        .collect()
}

/// A batch problem; about a fifth are made infeasible on purpose, by budget
/// or by capacity.
pub fn batch_problem(rng: &mut impl Rng, max_n: usize, max_m: usize) -> BatchProblem {
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(1..=max_m);
    let scores = scores(rng, n, m);
    let mut models = models(rng, n, m);
    let min = models.iter().map(|s| s.cost).fold(f64::INFINITY, f64::min);
    let max = models.iter().map(|s| s.cost).fold(0.0, f64::max);
    let mut budget = min + rng.gen::<f64>() * (max - min);
    match rng.gen_range(0..10) {
        0 => budget = (min - 0.001).max(0.0) * rng.gen::<f64>(),
        1 => {
            for s in &mut models {
                *s = ModelSpec::new(s.name.clone(), s.cost, 1, 1).with_instances(rng.gen_range(0..n as u32));
            }
        }
        _ => {}
    }
    BatchProblem::new(scores, models, budget)
}

/// Interval boxes around random centers.
pub fn intervals(rng: &mut impl Rng, n: usize, m: usize) -> IntervalMatrix {
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for _ in 0..n {
        let (mut l, mut h) = (Vec::new(), Vec::new());
        for _ in 0..m {
            let a: f64 = rng.gen();
            let b: f64 = rng.gen();
            l.push(a.min(b));
            h.push(a.max(b));
        }
        lo.push(l);
        hi.push(h);
    }
    IntervalMatrix::new(ScoreMatrix::from_rows(&lo).unwrap(), ScoreMatrix::from_rows(&hi).unwrap()).unwrap()
}

/// An allocation problem with `B` batches of `N` queries.
pub fn allocation_problem(rng: &mut impl Rng, b: usize, n: usize, m: usize, max_g: u64) -> AllocationProblem {
    let models: Vec<ModelSpec> = (0..m)
        .map(|j| {
            let name = format!("m{}", j + 1);
            let cost = (rng.gen::<f64>() * 100.0).round() / 10_000.0;
            if rng.gen_bool(0.2) {
                ModelSpec::cloud(name, cost)
            } else {
                ModelSpec::new(name, cost, rng.gen_range(1..=3), rng.gen_range(1..=3))
            }
        })
        .collect();
    let batches = (0..b).map(|_| scores(rng, n, m)).collect();
    let min = models.iter().map(|s| s.cost).fold(f64::INFINITY, f64::min);
    let max = models.iter().map(|s| s.cost).fold(0.0, f64::max);
    let budget = if rng.gen_bool(0.15) { f64::INFINITY } else { min + rng.gen::<f64>() * (max - min) };
    AllocationProblem { batches, models, gpu_budget: rng.gen_range(0..=max_g), budget }
}

/// Two cost tiers: a cheap model and a premium one that is clearly better on
/// about 30% of queries. Truth is the estimate plus small noise.
pub fn two_tier(rng: &mut impl Rng, n: usize) -> batchroute::simkit::Dataset {
    let mut est = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n {
        let hard = rng.gen_bool(0.3);
        let cheap: f64 = if hard { rng.gen_range(0.1..0.4) } else { rng.gen_range(0.6..0.9) };
        let premium: f64 =
            if hard { rng.gen_range(0.7..1.0) } else { (cheap + rng.gen_range(-0.05..0.1)).clamp(0.0, 1.0) };
        est.push(vec![cheap, premium]);
        let noise = |v: f64, rng: &mut dyn rand::RngCore| (v + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0);
        truth.push(vec![noise(cheap, rng), noise(premium, rng)]);
    }
    let labelled = |rows: &[Vec<f64>]| {
        let ids = (0..n).map(|i| format!("q{i}")).collect();
        let cols = vec!["cheap".to_string(), "premium".to_string()];
        ScoreMatrix::new(ids, cols, rows.concat()).unwrap()
    };
    batchroute::simkit::Dataset {
        scores: labelled(&est),
        truth: Some(labelled(&truth)),
        models: vec![ModelSpec::cloud("cheap", 0.0002), ModelSpec::cloud("premium", 0.01)],
    }
}

/// Training data where model `volatile` has the higher mean score but noisy
/// outcomes and model `steady` a moderate, stable one; plus query
/// embeddings from the same distribution.
pub struct Heteroscedastic {
    pub train_embeddings: Vec<Vec<f64>>,
    pub train_scores: ScoreMatrix,
    pub query_ids: Vec<String>,
    pub query_embeddings: Vec<Vec<f64>>,
}

pub fn heteroscedastic(rng: &mut impl Rng, n_train: usize, n_query: usize, dim: usize) -> Heteroscedastic {
    let vector = |rng: &mut dyn rand::RngCore| -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let train_embeddings: Vec<Vec<f64>> = (0..n_train).map(|_| vector(rng)).collect();
    let rows: Vec<Vec<f64>> = (0..n_train)
        .map(|_| {
            let volatile = if rng.gen_bool(0.75) { 1.0 } else { 0.0 };
            let steady = rng.gen_range(0.6..0.7);
            vec![volatile, steady]
        })
        .collect();
    let ids = (0..n_train).map(|i| format!("t{i}")).collect();
    let cols = vec!["volatile".to_string(), "steady".to_string()];
    let train_scores = ScoreMatrix::new(ids, cols, rows.concat()).unwrap();
    let query_embeddings = (0..n_query).map(|_| vector(rng)).collect();
    Heteroscedastic {
        train_embeddings,
        train_scores,
        query_ids: (0..n_query).map(|i| format!("q{i}")).collect(),
        query_embeddings,
    }
}
