//! Score estimates from query embeddings.
//!
//! A [`KnnModel`] predicts a query's per-model scores as the mean over its `k`
//! most cosine-similar training queries. A [`BootstrapEnsemble`] refits that
//! estimator on resampled training sets; the spread of member predictions
//! yields quantile bounds ([`interval_predict`]) for robust routing, and
//! [`pi_risk_report`] compares the interval lengths of two routing policies.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EstimatorError;
use crate::model::{IntervalMatrix, ScoreMatrix};

/// Default number of bootstrap resamples.
pub const DEFAULT_RESAMPLES: usize = 100;
/// Default quantile, in percent, of the robust lower bound.
pub const DEFAULT_Q: f64 = 10.0;

/// Normalized training embeddings, stored once and shared by every ensemble
/// member.
#[derive(Debug, Clone, PartialEq)]
struct TrainSet {
    dim: usize,
    /// Row-major, each row scaled to unit L2 norm.
    unit: Vec<f64>,
    scores: ScoreMatrix,
}

impl TrainSet {
    fn new(embeddings: &[Vec<f64>], scores: &ScoreMatrix) -> Result<Self, EstimatorError> {
        if embeddings.is_empty() {
            return Err(EstimatorError::EmptyTrainingSet);
        }
        if embeddings.len() != scores.n_rows() {
            return Err(EstimatorError::RowCountMismatch { embeddings: embeddings.len(), scores: scores.n_rows() });
        }
        let dim = embeddings[0].len();
        let mut unit = Vec::with_capacity(embeddings.len() * dim);
        for (row, e) in embeddings.iter().enumerate() {
            if e.len() != dim {
                return Err(EstimatorError::DimensionMismatch { expected: dim, found: e.len() });
            }
            let norm = l2_norm(e).ok_or(EstimatorError::DegenerateEmbedding { row })?;
            unit.extend(e.iter().map(|v| v / norm));
        }
        Ok(Self { dim, unit, scores: scores.clone() })
    }

    fn n(&self) -> usize {
        self.scores.n_rows()
    }

    /// Similarity of every training row to `query`. The query is left
    /// unnormalized: ranking by the dot product equals ranking by cosine.
    fn similarities(&self, query: &[f64]) -> Result<Vec<f64>, EstimatorError> {
        if query.len() != self.dim {
            return Err(EstimatorError::DimensionMismatch { expected: self.dim, found: query.len() });
        }
        if l2_norm(query).is_none() {
            return Err(EstimatorError::DegenerateEmbedding { row: 0 });
        }
        Ok(self.unit.chunks_exact(self.dim.max(1)).take(self.n()).map(|t| dot(t, query)).collect())
    }

    /// Mean score rows of the `k` most similar entries of `rows` (indices into
    /// the training set). Ties go to the earlier position in `rows`.
    fn mean_of_top(&self, sims: &[f64], rows: &[usize], k: usize) -> Vec<f64> {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let cmp = |a: &usize, b: &usize| -> Ordering { sims[rows[*b]].total_cmp(&sims[rows[*a]]).then(a.cmp(b)) };
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        let m = self.scores.n_cols();
        let mut out = vec![0.0; m];
        for &pos in &order {
            for (o, s) in out.iter_mut().zip(self.scores.row(rows[pos])) {
                *o += s;
            }
        }
        for o in &mut out {
            *o = (*o / k as f64).clamp(0.0, 1.0);
        }
        out
    }
}

fn l2_norm(v: &[f64]) -> Option<f64> {
    let norm = dot(v, v).sqrt();
    (norm.is_finite() && norm > 0.0).then_some(norm)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// kNN regressor over L2-normalized embeddings with cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    train: Arc<TrainSet>,
    /// Training rows of this model, in order; may repeat rows.
    rows: Vec<usize>,
    k: usize,
}

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.train.dim
    }

    /// Number of training rows, counting repeats.
    pub fn n_train(&self) -> usize {
        self.rows.len()
    }

    /// Model names of the predicted score vectors.
    pub fn models(&self) -> &[String] {
        self.train.scores.cols()
    }

    /// Positions (into this model's training rows) of the `k` nearest
    /// neighbors of `query`, nearest first.
    pub fn neighbors(&self, query: &[f64]) -> Result<Vec<usize>, EstimatorError> {
        let sims = self.train.similarities(query)?;
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by(|&a, &b| sims[self.rows[b]].total_cmp(&sims[self.rows[a]]).then(a.cmp(&b)));
        order.truncate(self.k);
        Ok(order)
    }

    fn predict_with(&self, sims: &[f64]) -> Vec<f64> {
        self.train.mean_of_top(sims, &self.rows, self.k)
    }
}

/// Fits a kNN estimator. Row `t` of `train_scores` holds the observed scores
/// of the query embedded as `train_embeddings[t]`.
pub fn fit_knn(
    train_embeddings: &[Vec<f64>],
    train_scores: &ScoreMatrix,
    k: usize,
) -> Result<KnnModel, EstimatorError> {
    let train = TrainSet::new(train_embeddings, train_scores)?;
    check_k(k, train.n())?;
    let rows = (0..train.n()).collect();
    Ok(KnnModel { train: Arc::new(train), rows, k })
}

fn check_k(k: usize, n: usize) -> Result<(), EstimatorError> {
    if k == 0 {
        return Err(EstimatorError::ZeroK);
    }
    if k > n {
        return Err(EstimatorError::KTooLarge { k, n });
    }
    Ok(())
}

/// Per-model score estimate for one query: the unweighted mean of the `k`
/// nearest training rows, ties broken by training index.
pub fn predict(model: &KnnModel, query_embedding: &[f64]) -> Result<Vec<f64>, EstimatorError> {
    let sims = model.train.similarities(query_embedding)?;
    Ok(model.predict_with(&sims))
}

/// Predicts a whole query set, one row per embedding, labelled by `ids`.
pub fn predict_matrix(
    model: &KnnModel,
    ids: &[String],
    embeddings: &[Vec<f64>],
) -> Result<ScoreMatrix, EstimatorError> {
    let rows = embeddings.par_iter().map(|e| predict(model, e)).collect::<Result<Vec<_>, _>>()?;
    Ok(ScoreMatrix::new(ids.to_vec(), model.models().to_vec(), rows.concat()).expect("predictions are valid scores"))
}

/// kNN estimators refit on bootstrap resamples of one training set.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapEnsemble {
    train: Arc<TrainSet>,
    resamples: Vec<Vec<usize>>,
    k: usize,
    seed: u64,
}

impl BootstrapEnsemble {
    pub fn n_resamples(&self) -> usize {
        self.resamples.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn models(&self) -> &[String] {
        self.train.scores.cols()
    }

    /// Training rows drawn for member `r`, in draw order.
    pub fn resample(&self, r: usize) -> &[usize] {
        &self.resamples[r]
    }

    /// Member `r` as a standalone estimator.
    pub fn member(&self, r: usize) -> KnnModel {
        KnnModel { train: Arc::clone(&self.train), rows: self.resamples[r].clone(), k: self.k }
    }

    /// Every member's prediction for one query, `[member][model]`.
    pub fn member_predictions(&self, query_embedding: &[f64]) -> Result<Vec<Vec<f64>>, EstimatorError> {
        let sims = self.train.similarities(query_embedding)?;
        Ok(self.resamples.iter().map(|rows| self.train.mean_of_top(&sims, rows, self.k)).collect())
    }
}

/// Row indices drawn with replacement for resample `r`: `n` uniform draws
/// from stream `r` of a ChaCha8 generator seeded with `seed`.
pub fn resample_indices(n: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Fits `n_resamples` kNN members, member `r` on the rows
/// [`resample_indices`]`(n, seed, r)`.
pub fn bootstrap_fit(
    train_embeddings: &[Vec<f64>],
    train_scores: &ScoreMatrix,
    k: usize,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapEnsemble, EstimatorError> {
    if n_resamples < 2 {
        return Err(EstimatorError::TooFewResamples(n_resamples));
    }
    let train = TrainSet::new(train_embeddings, train_scores)?;
    let n = train.n();
    check_k(k, n)?;
    let resamples = (0..n_resamples).into_par_iter().map(|r| resample_indices(n, seed, r)).collect();
    Ok(BootstrapEnsemble { train: Arc::new(train), resamples, k, seed })
}

/// Which bounds [`interval_predict`] takes from member quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Lower bound at `Q`; the upper bound is the largest member prediction.
    Lower,
    /// Upper bound at `100 - Q`; the lower bound is the smallest member
    /// prediction.
    Upper,
    /// Both bounds from quantiles.
    Both,
}

/// Quantile level `q_percent` (the `Q` of a one-sided `1 - Q%` interval).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileConfig {
    pub q_percent: f64,
    pub side: Side,
}

impl QuantileConfig {
    pub fn new(q_percent: f64, side: Side) -> Result<Self, EstimatorError> {
        if !(q_percent > 0.0 && q_percent < 100.0) {
            return Err(EstimatorError::InvalidQuantile(q_percent));
        }
        Ok(Self { q_percent, side })
    }
}

impl Default for QuantileConfig {
    fn default() -> Self {
        Self { q_percent: DEFAULT_Q, side: Side::Both }
    }
}

/// 1-based order statistic used for the `q`-th percentile of `n` values:
/// `ceil(q / 100 * n)` clamped to `[1, n]`.
pub fn quantile_index(q_percent: f64, n: usize) -> usize {
    let x = q_percent * n as f64 / 100.0;
    // Absorb representation error so that e.g. 10% of 100 is exactly 10.
    let idx = (x - 1e-9 * x.abs().max(1.0)).ceil();
    (idx.max(1.0) as usize).min(n.max(1))
}

/// Quantile bounds and mean of member predictions for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub point: Vec<f64>,
}

/// Per-model lower (`Q`-th percentile), upper (`100 - Q`-th percentile) and
/// mean of the ensemble's member predictions.
pub fn interval_predict(
    ensemble: &BootstrapEnsemble,
    query_embedding: &[f64],
    qc: QuantileConfig,
) -> Result<Interval, EstimatorError> {
    QuantileConfig::new(qc.q_percent, qc.side)?;
    let preds = ensemble.member_predictions(query_embedding)?;
    let n = preds.len();
    let m = ensemble.models().len();
    let lo_idx = quantile_index(qc.q_percent, n) - 1;
    let hi_idx = quantile_index(100.0 - qc.q_percent, n) - 1;
    let mut out = Interval { lower: vec![0.0; m], upper: vec![0.0; m], point: vec![0.0; m] };
    let mut column = vec![0.0; n];
    for j in 0..m {
        for (c, p) in column.iter_mut().zip(&preds) {
            *c = p[j];
        }
        out.point[j] = (column.iter().sum::<f64>() / n as f64).clamp(0.0, 1.0);
        column.sort_by(f64::total_cmp);
        // Above Q = 50 the two quantiles cross; the lower bound stays the
        // Q-th order statistic so that it is monotone in Q.
        let (lo, hi) = match qc.side {
            Side::Lower => (lo_idx, n - 1),
            Side::Upper => (0, hi_idx),
            Side::Both => (lo_idx, hi_idx.max(lo_idx)),
        };
        out.lower[j] = column[lo];
        out.upper[j] = column[hi];
    }
    Ok(out)
}

/// [`interval_predict`] over a query set: the interval matrix and the matrix
/// of member means.
pub fn interval_predict_matrix(
    ensemble: &BootstrapEnsemble,
    ids: &[String],
    embeddings: &[Vec<f64>],
    qc: QuantileConfig,
) -> Result<(IntervalMatrix, ScoreMatrix), EstimatorError> {
    let rows = embeddings.par_iter().map(|e| interval_predict(ensemble, e, qc)).collect::<Result<Vec<_>, _>>()?;
    let cols = ensemble.models().to_vec();
    let build = |f: fn(&Interval) -> &Vec<f64>| {
        let values = rows.iter().flat_map(|r| f(r).iter().copied()).collect();
        ScoreMatrix::new(ids.to_vec(), cols.clone(), values).expect("member predictions are valid scores")
    };
    let intervals = IntervalMatrix::new(build(|r| &r.lower), build(|r| &r.upper)).expect("quantile bounds are ordered");
    Ok((intervals, build(|r| &r.point)))
}

/// Share of queries, in percent, where the point-estimate pick has a
/// shorter, equal or longer prediction interval than the robust pick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub shorter: f64,
    pub equal: f64,
    pub longer: f64,
}

/// Interval lengths closer than this count as equal.
pub const LENGTH_TOLERANCE: f64 = 1e-12;

/// Compares, query by query, the interval length of the model picked from
/// point estimates against the model picked by the robust router.
pub fn pi_risk_report(
    point_picks: &[usize],
    robust_picks: &[usize],
    intervals: &IntervalMatrix,
) -> Result<RiskReport, EstimatorError> {
    let n = intervals.lower().n_rows();
    let m = intervals.lower().n_cols();
    if point_picks.len() != robust_picks.len() || point_picks.len() != n {
        return Err(EstimatorError::PickLengthMismatch { point: point_picks.len(), robust: robust_picks.len() });
    }
    let mut counts = [0usize; 3];
    for (i, (&p, &r)) in point_picks.iter().zip(robust_picks).enumerate() {
        for pick in [p, r] {
            if pick >= m {
                return Err(EstimatorError::PickOutOfRange { query: i, pick });
            }
        }
        let d = intervals.length(i, p) - intervals.length(i, r);
        let slot = if d.abs() <= LENGTH_TOLERANCE {
            1
        } else if d < 0.0 {
            0
        } else {
            2
        };
        counts[slot] += 1;
    }
    let pct = |c: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
    Ok(RiskReport {
        shorter: pct(counts[0]),
        equal: if n == 0 { 100.0 } else { pct(counts[1]) },
        longer: pct(counts[2]),
    })
}
