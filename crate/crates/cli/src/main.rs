//! `batchroute`: route query batches under a budget, allocate GPU instances,
//! run simulation sweeps and check dataset files.
//!
//! Exit codes: 0 success, 1 error, 2 proven infeasible.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use batchroute::alloc::solve_allocation;
use batchroute::estimator::{bootstrap_fit, fit_knn, interval_predict_matrix, predict_matrix, QuantileConfig, Side};
use batchroute::io::{
    load_embeddings, load_interval_matrix, load_models, load_score_matrix, save_models, write_assignment, write_report,
    Embeddings,
};
use batchroute::router::{robustify, solve_batch, Fallback, SolverOptions};
use batchroute::simkit::{
    full_pipeline, make_adversarial_batches, make_random_batches, pick_costs, run_batch_experiment, sweep_per_query,
    Dataset, PipelineConfig, Scheme,
};
use batchroute::{validate_solution, AllocError, AllocationProblem, BatchProblem, ModelSpec, ScoreMatrix, SolveStatus};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{BudgetSpec, Estimates, Method, SimConfig};

#[derive(Parser)]
#[command(name = "batchroute", version, about = "Batch-level LLM query routing under budget and capacity limits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Route one batch of queries under an average cost budget.
    Route(RouteArgs),
    /// Choose instance counts for self-hosted models on calibration data.
    Allocate(AllocateArgs),
    /// Run a simulation described by a config file and emit a report.
    Simulate(SimulateArgs),
    /// Check dataset files for schema, range and label problems.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FallbackArg {
    Error,
    CheapestFeasible,
}

#[derive(Args)]
struct SolverArgs {
    /// Absolute optimality gap, in mean-score units, accepted as optimal.
    #[arg(long, default_value_t = 0.0)]
    gap: f64,
    /// Wall-clock limit per batch solve, in seconds.
    #[arg(long, default_value_t = 2.0)]
    time_limit: f64,
    /// Branch-and-bound node limit per batch solve.
    #[arg(long)]
    node_limit: Option<usize>,
}

impl SolverArgs {
    fn options(&self, fallback: Fallback) -> Result<SolverOptions> {
        if !(self.gap >= 0.0) {
            bail!("--gap must be >= 0");
        }
        if !(self.time_limit > 0.0 && self.time_limit.is_finite()) {
            bail!("--time-limit must be a positive number of seconds");
        }
        let mut opts =
            SolverOptions::default().with_gap(self.gap).with_time_limit(Duration::from_secs_f64(self.time_limit));
        opts.fallback = fallback;
        if let Some(n) = self.node_limit {
            opts.node_limit = n;
        }
        Ok(opts)
    }
}

#[derive(Args)]
struct RouteArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    models: PathBuf,
    /// Average cost per query, in dollars.
    #[arg(long)]
    budget: f64,
    /// Lower and upper score bound files, comma separated.
    #[arg(long, value_name = "LOWER,UPPER")]
    intervals: Option<String>,
    /// Optimize the worst case over the score intervals.
    #[arg(long, requires = "intervals")]
    robust: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value = "error")]
    fallback: FallbackArg,
    /// Assignment file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AllocateArgs {
    #[arg(long)]
    calib_scores: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    gpu_budget: u64,
    /// Average cost per query, in dollars.
    #[arg(long)]
    budget: f64,
    #[arg(long)]
    batch_size: usize,
    /// Allocate on lower score bounds instead of point estimates.
    #[arg(long, requires = "calib_lower")]
    robust: bool,
    /// Lower score bounds of the calibration queries.
    #[arg(long)]
    calib_lower: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Models file with the chosen instance counts filled in.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    lower: Option<PathBuf>,
    #[arg(long)]
    upper: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    train_embeddings: Option<PathBuf>,
    #[arg(long)]
    train_scores: Option<PathBuf>,
}

/// Exit status 2: the instance was proven infeasible.
#[derive(Debug)]
struct Infeasible;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Route(a) => route(a),
        Command::Allocate(a) => allocate(a),
        Command::Simulate(a) => simulate(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Infeasible)) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Caps the worker pool at `ROUTE_THREADS` when set.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("ROUTE_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("ROUTE_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")
}

/// Orders `models` like the score columns; every column needs a model and
/// every model a column.
fn align_models(models: Vec<ModelSpec>, scores: &ScoreMatrix, models_path: &Path) -> Result<Vec<ModelSpec>> {
    let mut aligned = Vec::with_capacity(models.len());
    for col in scores.cols() {
        let m = models
            .iter()
            .find(|m| &m.name == col)
            .ok_or_else(|| anyhow!("score column {col:?} has no model in {}", models_path.display()))?;
        aligned.push(m.clone());
    }
    if let Some(extra) = models.iter().find(|m| !scores.cols().contains(&m.name)) {
        bail!("model {:?} has no score column", extra.name);
    }
    Ok(aligned)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn route(a: RouteArgs) -> Result<Result<(), Infeasible>> {
    let fallback = match a.fallback {
        FallbackArg::Error => Fallback::Error,
        FallbackArg::CheapestFeasible => Fallback::CheapestFeasible,
    };
    let opts = a.solver.options(fallback)?;
    let point = load_score_matrix(&a.scores)?;
    let models = align_models(load_models(&a.models)?, &point, &a.models)?;
    let scores = match &a.intervals {
        Some(spec) => {
            let (lo, hi) = spec.split_once(',').ok_or_else(|| anyhow!("--intervals expects LOWER,UPPER"))?;
            let intervals = load_interval_matrix(Path::new(lo), Path::new(hi))?;
            if !intervals.lower().same_labels(&point) {
                bail!("interval files and {} label different queries or models", a.scores.display());
            }
            if a.robust {
                robustify(&intervals)
            } else {
                point
            }
        }
        None => point,
    };
    let problem = BatchProblem::new(scores, models, a.budget);
    let started = Instant::now();
    let sol = solve_batch(&problem, &opts)?;
    let wall = started.elapsed().as_secs_f64();
    if sol.status == SolveStatus::Infeasible {
        println!("# status=infeasible wall_time_s={wall:.6}");
        return Ok(Err(Infeasible));
    }
    let violations = validate_solution(&problem, &sol);
    if !violations.is_empty() {
        bail!("solver returned an invalid assignment: {violations:?}");
    }
    let names: Vec<String> = problem.models.iter().map(|m| m.name.clone()).collect();
    let mut out = output(a.out.as_deref())?;
    write_assignment(&mut out, problem.scores.rows(), &names, &sol.assignment)?;
    out.flush()?;
    drop(out);
    println!(
        "# objective={} avg_cost={} status={} gap={} wall_time_s={wall:.6}",
        sol.objective, sol.realized_avg_cost, sol.status, sol.gap
    );
    Ok(Ok(()))
}

fn allocate(a: AllocateArgs) -> Result<Result<(), Infeasible>> {
    let opts = a.solver.options(Fallback::Error)?;
    if a.batch_size == 0 {
        bail!("--batch-size must be >= 1");
    }
    let point = load_score_matrix(&a.calib_scores)?;
    let models = align_models(load_models(&a.models)?, &point, &a.models)?;
    let scores = match (&a.calib_lower, a.robust) {
        (Some(path), true) => {
            let lower = load_score_matrix(path)?;
            if !lower.same_labels(&point) {
                bail!("{} and {} label different queries or models", path.display(), a.calib_scores.display());
            }
            lower
        }
        _ => point,
    };
    let n = scores.n_rows();
    if n == 0 {
        bail!("{}: no calibration queries", a.calib_scores.display());
    }
    let rows: Vec<usize> = (0..n).collect();
    let batches: Vec<ScoreMatrix> = if n >= a.batch_size {
        rows.chunks_exact(a.batch_size).map(|r| scores.select_rows(r)).collect()
    } else {
        vec![scores]
    };
    let problem = AllocationProblem { batches, models, gpu_budget: a.gpu_budget, budget: a.budget };
    match solve_allocation(&problem, &opts) {
        Ok(sol) => {
            save_models(&a.out, &sol.apply(&problem.models))?;
            let counts: Vec<String> = problem
                .models
                .iter()
                .zip(&sol.instances)
                .filter_map(|(m, i)| i.map(|i| format!("{}={i}", m.name)))
                .collect();
            println!(
                "# objective={} gpus_used={} avg_cost={} status={} instances={}",
                sol.objective,
                sol.gpus_used(&problem.models),
                sol.mean_cost(),
                sol.status,
                counts.join(";")
            );
            Ok(Ok(()))
        }
        Err(AllocError::Infeasible) => {
            println!("# status=infeasible");
            Ok(Err(Infeasible))
        }
        Err(e) => Err(e.into()),
    }
}

fn simulate(a: SimulateArgs) -> Result<Result<(), Infeasible>> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let cfg = config::parse(&text, base)
        .map_err(|errs| anyhow!("{}: invalid config:\n  {}", a.config.display(), errs.join("\n  ")))?;
    let data = load_dataset(&cfg)?;
    let ids = data.scores.rows().to_vec();
    let mut out = output(a.out.as_deref())?;
    match cfg.method {
        Method::PerQuery => {
            let plan = plan(&cfg, &data, &ids);
            write_report(&mut out, "lambda", &sweep_per_query(&plan, &data, &cfg.lambda_grid), cfg.timing)?;
        }
        Method::Batch => {
            let plan = plan(&cfg, &data, &ids);
            let mut budgets = Vec::new();
            for spec in &cfg.budget_grid {
                match *spec {
                    BudgetSpec::Fixed(c) => budgets.push(c),
                    BudgetSpec::PerQueryMax => budgets.extend(
                        sweep_per_query(&plan, &data, &cfg.lambda_grid)
                            .iter()
                            .map(|(_, r)| r.aggregates.max_batch_cost),
                    ),
                }
            }
            write_report(&mut out, "budget", &run_batch_experiment(&plan, &data, &budgets, &cfg.opts), cfg.timing)?;
        }
        Method::Full => {
            let BudgetSpec::Fixed(budget) = cfg.budget_grid[0] else {
                bail!("method full needs a numeric budget");
            };
            let pc = PipelineConfig {
                calib_fraction: cfg.calib_fraction,
                batch_size: cfg.batch_size,
                gpu_budget: cfg.gpu_budget,
                budget,
                scheme: cfg.scheme,
                seed: cfg.seed,
                adversarial_lambda: cfg.adversarial_lambda,
                opts: cfg.opts,
            };
            match full_pipeline(&data, &pc) {
                Ok((report, alloc)) => {
                    write_report(&mut out, "budget", &[(budget, report)], cfg.timing)?;
                    let counts: Vec<String> = data
                        .models
                        .iter()
                        .zip(&alloc.instances)
                        .filter_map(|(m, i)| i.map(|i| format!("{}={i}", m.name)))
                        .collect();
                    writeln!(out, "#alloc,objective={},instances={}", alloc.objective, counts.join(";"))?;
                }
                Err(AllocError::Infeasible) => {
                    eprintln!("allocation is infeasible");
                    return Ok(Err(Infeasible));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    out.flush()?;
    Ok(Ok(()))
}

fn plan(cfg: &SimConfig, data: &Dataset, ids: &[String]) -> batchroute::simkit::BatchPlan {
    match cfg.scheme {
        Scheme::Random => make_random_batches(ids, cfg.batch_size, cfg.seed),
        Scheme::Adversarial => make_adversarial_batches(
            ids,
            cfg.batch_size,
            &pick_costs(&data.scores, &data.models, cfg.adversarial_lambda),
        ),
    }
}

fn load_dataset(cfg: &SimConfig) -> Result<Dataset> {
    let scores = match &cfg.estimates {
        Estimates::Files { scores, lower } => {
            let point = load_score_matrix(scores)?;
            match lower {
                Some(path) if cfg.robust => {
                    let lower = load_score_matrix(path)?;
                    if !lower.same_labels(&point) {
                        bail!("{} and {} label different queries or models", path.display(), scores.display());
                    }
                    lower
                }
                _ => point,
            }
        }
        Estimates::Knn { train_embeddings, train_scores, embeddings } => {
            let train = load_embeddings(train_embeddings)?;
            let train_scores_m = load_score_matrix(train_scores)?;
            if train.ids != train_scores_m.rows() {
                bail!("{} and {} list different queries", train_embeddings.display(), train_scores.display());
            }
            let Embeddings { ids, vectors } = load_embeddings(embeddings)?;
            if cfg.robust {
                let ens = bootstrap_fit(&train.vectors, &train_scores_m, cfg.knn_k, cfg.n_resamples, cfg.seed)?;
                let qc = QuantileConfig::new(cfg.quantile_q, Side::Lower)?;
                robustify(&interval_predict_matrix(&ens, &ids, &vectors, qc)?.0)
            } else {
                predict_matrix(&fit_knn(&train.vectors, &train_scores_m, cfg.knn_k)?, &ids, &vectors)?
            }
        }
    };
    let models = align_models(load_models(&cfg.models)?, &scores, &cfg.models)?;
    let truth = match &cfg.truth {
        Some(path) => {
            let t = load_score_matrix(path)?;
            if !t.same_labels(&scores) {
                bail!("{}: queries or models differ from the score estimates", path.display());
            }
            Some(t)
        }
        None => None,
    };
    Ok(Dataset { scores, truth, models })
}

/// A file given on the command line, with its parse result.
type Loaded<T> = Option<(PathBuf, std::result::Result<T, String>)>;

fn validate(a: ValidateArgs) -> Result<Result<(), Infeasible>> {
    let mut problems: Vec<String> = Vec::new();
    let mut checked = 0;
    let mut note = |r: Result<(), String>| {
        checked += 1;
        if let Err(e) = r {
            problems.push(e);
        }
    };

    let models = a.models.as_ref().map(|p| load_models(p).map_err(|e| e.to_string()));
    let score_file =
        |p: &Option<PathBuf>| p.as_ref().map(|p| (p.clone(), load_score_matrix(p).map_err(|e| e.to_string())));
    let matrices: Vec<(&str, Loaded<ScoreMatrix>)> = vec![
        ("scores", score_file(&a.scores)),
        ("lower", score_file(&a.lower)),
        ("upper", score_file(&a.upper)),
        ("truth", score_file(&a.truth)),
        ("train_scores", score_file(&a.train_scores)),
    ];
    let embedding_file =
        |p: &Option<PathBuf>| p.as_ref().map(|p| (p.clone(), load_embeddings(p).map_err(|e| e.to_string())));
    let query_emb = embedding_file(&a.embeddings);
    let train_emb = embedding_file(&a.train_embeddings);

    if let Some(m) = &models {
        note(m.as_ref().map(|_| ()).map_err(Clone::clone));
    }
    for (_, f) in &matrices {
        if let Some((_, r)) = f {
            note(r.as_ref().map(|_| ()).map_err(Clone::clone));
        }
    }
    for f in [&query_emb, &train_emb].into_iter().flatten() {
        note(f.1.as_ref().map(|_| ()).map_err(Clone::clone));
    }

    let loaded: Vec<(&str, &Path, &ScoreMatrix)> = matrices
        .iter()
        .filter_map(|(name, f)| f.as_ref().and_then(|(p, r)| r.as_ref().ok().map(|m| (*name, p.as_path(), m))))
        .collect();
    if let Some(Ok(models)) = &models {
        let names: Vec<&str> = models.iter().map(|m| m.name.as_str()).collect();
        for (_, path, m) in &loaded {
            let mut cols: Vec<&str> = m.cols().iter().map(String::as_str).collect();
            let mut want = names.clone();
            cols.sort_unstable();
            want.sort_unstable();
            note(if cols == want {
                Ok(())
            } else {
                Err(format!(
                    "{}: model columns {:?} do not match the models file {:?}",
                    path.display(),
                    m.cols(),
                    names
                ))
            });
        }
    }
    // Estimates, bounds and truth describe the same queries and models.
    let same_set: Vec<&(&str, &Path, &ScoreMatrix)> = loaded.iter().filter(|(n, _, _)| *n != "train_scores").collect();
    for pair in same_set.windows(2) {
        let (a0, b0) = (pair[0], pair[1]);
        note(if a0.2.same_labels(b0.2) {
            Ok(())
        } else {
            Err(format!("{} and {}: query ids or model columns differ", a0.1.display(), b0.1.display()))
        });
    }
    let lookup = |name: &str| loaded.iter().find(|(n, _, _)| *n == name).map(|(_, _, m)| *m);
    if let (Some(lo), Some(hi)) = (lookup("lower"), lookup("upper")) {
        if lo.same_labels(hi) {
            let bad = lo.values().iter().zip(hi.values()).position(|(l, h)| l > h);
            note(match bad {
                None => Ok(()),
                Some(k) => {
                    let (i, j) = (k / lo.n_cols(), k % lo.n_cols());
                    Err(format!(
                        "lower bound exceeds upper bound for query {:?}, model {:?}",
                        lo.rows()[i],
                        lo.cols()[j]
                    ))
                }
            });
        }
    }
    if let (Some((p, Ok(e))), Some(s)) = (&train_emb, lookup("train_scores")) {
        note(if e.ids == s.rows() {
            Ok(())
        } else {
            Err(format!("{}: query ids differ from the training scores", p.display()))
        });
    }
    if let (Some((p, Ok(e))), Some(s)) = (&query_emb, same_set.first()) {
        note(if e.ids == s.2.rows() {
            Ok(())
        } else {
            Err(format!("{}: query ids differ from {}", p.display(), s.1.display()))
        });
    }
    if let (Some((p, Ok(q))), Some((_, Ok(t)))) = (&query_emb, &train_emb) {
        let dim = |e: &Embeddings| e.vectors.first().map_or(0, Vec::len);
        note(if q.vectors.is_empty() || t.vectors.is_empty() || dim(q) == dim(t) {
            Ok(())
        } else {
            Err(format!("{}: dimension {} differs from the training embeddings' {}", p.display(), dim(q), dim(t)))
        });
    }

    if checked == 0 {
        bail!("nothing to validate; pass at least one file");
    }
    for p in &problems {
        println!("violation: {p}");
    }
    if problems.is_empty() {
        println!("ok: {checked} checks passed");
        Ok(Ok(()))
    } else {
        bail!("{} problem(s) found", problems.len())
    }
}
