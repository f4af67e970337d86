//! Simulation config: a flat `key = value` text file.
//!
//! Blank lines are ignored, and `#` at the start of a line or after
//! whitespace starts a comment. Unknown keys,
//! duplicate keys and malformed values are all collected and reported
//! together. Relative paths are resolved against the config file's
//! directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use batchroute::router::{Fallback, SolverOptions};
use batchroute::simkit::Scheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    PerQuery,
    Batch,
    Full,
}

/// One entry of `budget_grid`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetSpec {
    Fixed(f64),
    /// The largest per-batch average cost of the per-query router, for each
    /// `lambda` of `lambda_grid`.
    PerQueryMax,
}

/// Where score estimates come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimates {
    /// Precomputed estimates, with optional lower bounds for robust routing.
    Files { scores: PathBuf, lower: Option<PathBuf> },
    /// kNN estimates from labelled training embeddings.
    Knn { train_embeddings: PathBuf, train_scores: PathBuf, embeddings: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub models: PathBuf,
    pub estimates: Estimates,
    pub truth: Option<PathBuf>,
    pub method: Method,
    pub scheme: Scheme,
    pub batch_size: usize,
    pub budget_grid: Vec<BudgetSpec>,
    pub lambda_grid: Vec<f64>,
    pub adversarial_lambda: f64,
    pub seed: u64,
    pub robust: bool,
    pub quantile_q: f64,
    pub n_resamples: usize,
    pub knn_k: usize,
    pub gpu_budget: u64,
    pub calib_fraction: f64,
    pub opts: SolverOptions,
    pub timing: bool,
}

const KEYS: &[&str] = &[
    "models",
    "scores",
    "lower",
    "truth",
    "train_embeddings",
    "train_scores",
    "embeddings",
    "method",
    "scheme",
    "batch_size",
    "budget_grid",
    "lambda_grid",
    "adversarial_lambda",
    "seed",
    "robust",
    "quantile_q",
    "n_resamples",
    "knn_k",
    "gpu_budget",
    "calib_fraction",
    "time_limit_s",
    "gap_tolerance",
    "node_limit",
    "fallback",
    "timing",
];

struct Raw<'a> {
    entries: Vec<(&'a str, &'a str)>,
    errors: Vec<String>,
    base: &'a Path,
}

impl<'a> Raw<'a> {
    fn get(&self, key: &str) -> Option<&'a str> {
        self.entries.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|v| self.base.join(v))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> T {
        match self.get(key) {
            None => default,
            Some(v) => v.parse().unwrap_or_else(|_| {
                self.errors.push(format!("{key}: cannot parse {v:?}"));
                default
            }),
        }
    }

    fn list(&mut self, key: &str) -> Vec<f64> {
        let Some(v) = self.get(key) else { return Vec::new() };
        let mut out = Vec::new();
        for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse() {
                Ok(x) => out.push(x),
                Err(_) => self.errors.push(format!("{key}: cannot parse {item:?}")),
            }
        }
        out
    }
}

/// Parses a config document. `base` is the directory relative paths refer
/// to. On failure every problem found is returned.
pub fn parse(text: &str, base: &Path) -> Result<SimConfig, Vec<String>> {
    let mut raw = Raw { entries: Vec::new(), errors: Vec::new(), base };
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        // A `#` at the start of a line or after whitespace starts a comment.
        let line = match line.find(" #").or_else(|| line.find("\t#")) {
            Some(at) => &line[..at],
            None => line,
        }
        .trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            raw.errors.push(format!("line {}: expected `key = value`", n + 1));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            raw.errors.push(format!("line {}: unknown key {k:?}", n + 1));
        } else if !seen.insert(k) {
            raw.errors.push(format!("line {}: duplicate key {k:?}", n + 1));
        } else {
            raw.entries.push((k, v));
        }
    }

    let models = raw.path("models");
    if models.is_none() {
        raw.errors.push("models: required".into());
    }
    let estimates =
        match (raw.path("scores"), raw.path("train_embeddings"), raw.path("train_scores"), raw.path("embeddings")) {
            (Some(scores), None, None, None) => Some(Estimates::Files { scores, lower: raw.path("lower") }),
            (None, Some(train_embeddings), Some(train_scores), Some(embeddings)) => {
                if raw.get("lower").is_some() {
                    raw.errors.push("lower: not used with kNN estimates (bounds come from the bootstrap)".into());
                }
                Some(Estimates::Knn { train_embeddings, train_scores, embeddings })
            }
            _ => {
                raw.errors.push(
                    "estimates: give either `scores` or all of `train_embeddings`, `train_scores`, `embeddings`".into(),
                );
                None
            }
        };
    let method = match raw.get("method") {
        Some("per-query") => Some(Method::PerQuery),
        Some("batch") => Some(Method::Batch),
        Some("full") => Some(Method::Full),
        Some(other) => {
            raw.errors.push(format!("method: expected per-query, batch or full, got {other:?}"));
            None
        }
        None => {
            raw.errors.push("method: required".into());
            None
        }
    };
    let scheme = match raw.get("scheme").unwrap_or("random") {
        "random" => Scheme::Random,
        "adversarial" => Scheme::Adversarial,
        other => {
            raw.errors.push(format!("scheme: expected random or adversarial, got {other:?}"));
            Scheme::Random
        }
    };
    let batch_size = raw.parse("batch_size", 0usize);
    if batch_size == 0 {
        raw.errors.push("batch_size: required, >= 1".into());
    }
    let mut budget_grid = Vec::new();
    if let Some(v) = raw.get("budget_grid") {
        for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if item == "per_query_max" {
                budget_grid.push(BudgetSpec::PerQueryMax);
            } else {
                match item.parse::<f64>() {
                    Ok(x) if x >= 0.0 => budget_grid.push(BudgetSpec::Fixed(x)),
                    _ => raw.errors.push(format!("budget_grid: cannot parse {item:?}")),
                }
            }
        }
    }
    let lambda_grid = raw.list("lambda_grid");
    if lambda_grid.iter().any(|&l| !(l >= 0.0)) {
        raw.errors.push("lambda_grid: values must be >= 0".into());
    }
    let adversarial_lambda = raw.parse("adversarial_lambda", 0.0);
    let seed = raw.parse("seed", 0u64);
    let robust = raw.parse("robust", false);
    let quantile_q = raw.parse("quantile_q", batchroute::estimator::DEFAULT_Q);
    if !(quantile_q > 0.0 && quantile_q < 100.0) {
        raw.errors.push(format!("quantile_q: must lie in (0, 100), got {quantile_q}"));
    }
    let n_resamples = raw.parse("n_resamples", batchroute::estimator::DEFAULT_RESAMPLES);
    if n_resamples < 2 {
        raw.errors.push("n_resamples: must be >= 2".into());
    }
    let knn_k = raw.parse("knn_k", 5usize);
    if knn_k == 0 {
        raw.errors.push("knn_k: must be >= 1".into());
    }
    let gpu_budget = raw.parse("gpu_budget", 0u64);
    let calib_fraction = raw.parse("calib_fraction", 0.1);
    if !(calib_fraction > 0.0 && calib_fraction <= 1.0) {
        raw.errors.push(format!("calib_fraction: must lie in (0, 1], got {calib_fraction}"));
    }
    let defaults = SolverOptions::default();
    let time_limit_s = raw.parse("time_limit_s", defaults.time_limit.as_secs_f64());
    if !(time_limit_s > 0.0) || !time_limit_s.is_finite() {
        raw.errors.push(format!("time_limit_s: must be a positive number, got {time_limit_s}"));
    }
    let gap_tolerance = raw.parse("gap_tolerance", 0.0);
    if !(gap_tolerance >= 0.0) {
        raw.errors.push("gap_tolerance: must be >= 0".into());
    }
    let node_limit = raw.parse("node_limit", defaults.node_limit);
    let fallback = match raw.get("fallback").unwrap_or("error") {
        "error" => Fallback::Error,
        "cheapest" => Fallback::CheapestFeasible,
        other => {
            raw.errors.push(format!("fallback: expected error or cheapest, got {other:?}"));
            Fallback::Error
        }
    };
    let timing = raw.parse("timing", false);

    if let Some(method) = method {
        match method {
            Method::PerQuery if lambda_grid.is_empty() => {
                raw.errors.push("lambda_grid: required for method per-query".into())
            }
            Method::Batch | Method::Full if budget_grid.is_empty() => {
                raw.errors.push("budget_grid: required for methods batch and full".into())
            }
            Method::Full if budget_grid.len() != 1 => {
                raw.errors.push("budget_grid: method full takes one budget".into())
            }
            _ => {}
        }
        if budget_grid.contains(&BudgetSpec::PerQueryMax) && lambda_grid.is_empty() {
            raw.errors.push("budget_grid: per_query_max needs lambda_grid".into());
        }
    }
    if scheme == Scheme::Adversarial && !(adversarial_lambda >= 0.0) {
        raw.errors.push("adversarial_lambda: must be >= 0".into());
    }
    if robust {
        if let Some(Estimates::Files { lower: None, .. }) = estimates {
            raw.errors.push("robust: needs `lower` or kNN estimates".into());
        }
    }

    if !raw.errors.is_empty() {
        return Err(raw.errors);
    }
    Ok(SimConfig {
        models: models.expect("checked"),
        estimates: estimates.expect("checked"),
        truth: raw.path("truth"),
        method: method.expect("checked"),
        scheme,
        batch_size,
        budget_grid,
        lambda_grid,
        adversarial_lambda,
        seed,
        robust,
        quantile_q,
        n_resamples,
        knn_k,
        gpu_budget,
        calib_fraction,
        opts: SolverOptions {
            time_limit: Duration::from_secs_f64(time_limit_s.clamp(0.0, 1e9)),
            gap_tolerance,
            node_limit,
            fallback,
        },
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_batch_config() {
        let cfg = parse(
            "models = m.json\nscores = s.csv\nmethod = batch\nbatch_size = 10\nbudget_grid = 0.1, 0.2\n",
            Path::new("/d"),
        )
        .unwrap();
        assert_eq!(cfg.models, Path::new("/d/m.json"));
        assert_eq!(cfg.budget_grid, vec![BudgetSpec::Fixed(0.1), BudgetSpec::Fixed(0.2)]);
        assert_eq!(cfg.scheme, Scheme::Random);
    }

    #[test]
    fn every_problem_is_reported() {
        let errs = parse("colour = red\nmethod = sideways\nbatch_size = x\n", Path::new(".")).unwrap_err();
        let text = errs.join("\n");
        for needle in ["unknown key \"colour\"", "method", "batch_size", "models: required", "estimates"] {
            assert!(text.contains(needle), "missing {needle:?} in {text}");
        }
    }

    #[test]
    fn trailing_comments_are_ignored() {
        let cfg = parse("models = m.json  # fleet\nscores = s.csv\nmethod = full\t# one budget\nbatch_size = 4\nbudget_grid = 0.5\n", Path::new("/d"))
            .unwrap();
        assert_eq!(cfg.models, Path::new("/d/m.json"));
        assert_eq!(cfg.method, Method::Full);
    }
}
