//! File formats read and written by the command-line tool.
//!
//! * `models.json`: array of `{"name", "cost", "gpus", "concurrency",
//!   "instances"?}` objects.
//! * Score files (`scores.csv`, `lower.csv`, `upper.csv`, `truth.csv`):
//!   header `query_id,<model>,...`, one row per query, values in `[0, 1]`.
//! * `embeddings.csv`: header `query_id,e0,...,e{d-1}`, finite reals.
//! * Assignments: header `query_id,model`.
//! * Reports: see [`write_report`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::IoError;
use crate::model::{IntervalMatrix, ModelSpec, ScoreMatrix};
use crate::simkit::MetricsReport;

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::Io { path: display(path), source })
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|source| IoError::Io { path: display(path), source })
}

/// Reads and validates a models file.
pub fn load_models(path: &Path) -> Result<Vec<ModelSpec>, IoError> {
    let models: Vec<ModelSpec> = serde_json::from_reader(BufReader::new(open(path)?)).map_err(|e| IoError::Parse {
        path: display(path),
        line: e.line(),
        message: e.to_string(),
    })?;
    if models.is_empty() {
        return Err(IoError::Schema { path: display(path), message: "no models".into() });
    }
    for m in &models {
        m.validate().map_err(|source| IoError::Model { path: display(path), source })?;
    }
    let mut names: Vec<&str> = models.iter().map(|m| m.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(IoError::Schema { path: display(path), message: format!("duplicate model name {:?}", w[0]) });
    }
    Ok(models)
}

/// Writes a models file, pretty-printed, with a trailing newline.
pub fn save_models(path: &Path, models: &[ModelSpec]) -> Result<(), IoError> {
    let mut out = create(path)?;
    let io = |source| IoError::Io { path: display(path), source };
    serde_json::to_writer_pretty(&mut out, models).map_err(|e| io(e.into()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(io)
}

/// A labelled numeric table: first column `query_id`, then one column per
/// header entry.
struct Table {
    ids: Vec<String>,
    cols: Vec<String>,
    values: Vec<f64>,
}

fn read_table(path: &Path, first_col_check: impl Fn(usize, &str) -> Option<String>) -> Result<Table, IoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(BufReader::new(open(path)?));
    let parse_err = |line: u64, message: String| IoError::Parse { path: display(path), line: line as usize, message };
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.get(0) != Some("query_id") {
        return Err(parse_err(1, "first column must be \"query_id\"".into()));
    }
    let cols: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if cols.is_empty() {
        return Err(parse_err(1, "no value columns".into()));
    }
    for (k, c) in cols.iter().enumerate() {
        if let Some(msg) = first_col_check(k, c) {
            return Err(parse_err(1, msg));
        }
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != cols.len() + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", cols.len() + 1, record.len())));
        }
        ids.push(record[0].to_owned());
        for (k, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("column {:?}: {:?} is not a number", cols[k], field)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {:?}: value is not finite", cols[k])));
            }
            values.push(v);
        }
    }
    Ok(Table { ids, cols, values })
}

/// Reads a score matrix; values outside `[0, 1]` are rejected with the
/// offending line and column.
pub fn load_score_matrix(path: &Path) -> Result<ScoreMatrix, IoError> {
    let t = read_table(path, |_, _| None)?;
    let m = t.cols.len();
    if let Some(idx) = t.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(IoError::Parse {
            path: display(path),
            line: idx / m + 2,
            message: format!(
                "query {:?}, model {:?}: score {} outside [0, 1]",
                t.ids[idx / m],
                t.cols[idx % m],
                t.values[idx]
            ),
        });
    }
    ScoreMatrix::new(t.ids, t.cols, t.values).map_err(|source| IoError::Model { path: display(path), source })
}

/// Reads matching lower- and upper-bound files.
pub fn load_interval_matrix(lower: &Path, upper: &Path) -> Result<IntervalMatrix, IoError> {
    let lo = load_score_matrix(lower)?;
    let hi = load_score_matrix(upper)?;
    IntervalMatrix::new(lo, hi).map_err(|source| IoError::Model { path: display(upper), source })
}

/// Query embeddings with their ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

/// Reads an embeddings file; the header must be `query_id,e0,...`.
pub fn load_embeddings(path: &Path) -> Result<Embeddings, IoError> {
    let t = read_table(path, |k, c| {
        (c != format!("e{k}")).then(|| format!("column {} must be named \"e{k}\", found {c:?}", k + 2))
    })?;
    let d = t.cols.len();
    Ok(Embeddings { ids: t.ids, vectors: t.values.chunks(d).map(<[f64]>::to_vec).collect() })
}

/// Writes `query_id,model` rows for an assignment.
pub fn write_assignment(
    out: &mut impl Write,
    query_ids: &[String],
    model_names: &[String],
    assignment: &[usize],
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query_id", "model"])?;
    for (id, &j) in query_ids.iter().zip(assignment) {
        w.write_record([id.as_str(), model_names[j].as_str()])?;
    }
    w.flush()
}

/// Header of report files.
pub const REPORT_HEADER: &str = "batch_index,status,objective_est,performance_true,avg_cost,wall_time_s";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes report CSV: the header, then for each run a `#run,<param>=<value>`
/// line followed by its batch rows, then one `#agg,<param>=<value>,...`
/// footer line per run. Missing values are empty fields. Wall times are
/// written only when `timing` is set, so that untimed reports are
/// reproducible byte for byte.
pub fn write_report(
    out: &mut impl Write,
    param: &str,
    runs: &[(f64, MetricsReport)],
    timing: bool,
) -> std::io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for (value, report) in runs {
        writeln!(out, "#run,{param}={value}")?;
        for r in &report.per_batch {
            let t = if timing { r.wall_time_s.to_string() } else { String::new() };
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.batch_index,
                r.status.as_str(),
                opt(r.objective_est),
                opt(r.performance_true),
                opt(r.avg_cost),
                t
            )?;
        }
    }
    for (value, report) in runs {
        let a = &report.aggregates;
        writeln!(
            out,
            "#agg,{param}={value},mean_performance={},max_batch_cost={},total_cost={},cost_std={},cost_variance={},unrouted_batches={}",
            a.mean_performance,
            a.max_batch_cost,
            a.total_cost,
            a.cost_std(),
            a.cost_variance,
            a.unrouted_batches
        )?;
    }
    Ok(())
}

/// Writes a report file; see [`write_report`].
pub fn save_report(path: &Path, param: &str, runs: &[(f64, MetricsReport)], timing: bool) -> Result<(), IoError> {
    let mut out = create(path)?;
    write_report(&mut out, param, runs, timing)
        .and_then(|_| out.flush())
        .map_err(|source| IoError::Io { path: display(path), source })
}
