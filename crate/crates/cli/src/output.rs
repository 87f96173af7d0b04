//! CSV writers. Numbers use Rust's shortest round-trip formatting, so equal
//! runs give equal bytes.

use anyhow::{Context, Result};
use riskgrad_core::optimizer::{IterationRecord, RunRecord};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

/// Frozen trace schema.
pub const TRACE_COLUMNS: [&str; 8] = [
    "k",
    "M_k",
    "t_k",
    "variance",
    "w_k",
    "cum_solves",
    "rel_error",
    "wall_seconds",
];

/// Extra columns of the per-seed traces.
pub const RUN_EXTRA_COLUMNS: [&str; 9] = [
    "residual_norm",
    "rho",
    "active_gradients",
    "next_threshold",
    "basis_dim",
    "greedy_solves",
    "resamples",
    "clamped",
    "bound_violations",
];

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "problem",
    "beta",
    "alg1_iterations",
    "alg2_iterations",
    "alg1_solves",
    "alg1_final_rel_error",
    "alg2_solves_at_matched_error",
    "matched_seeds",
    "solve_ratio",
    "time_ratio",
];

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes rows one by one and flushes after each, so an interrupted run
/// leaves a readable prefix.
pub struct RowWriter {
    inner: csv::Writer<BufWriter<File>>,
    wall_clock: bool,
    extended: bool,
}

impl RowWriter {
    pub fn create(path: &Path, wall_clock: bool, extended: bool) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut inner = csv::Writer::from_writer(BufWriter::new(file));
        let mut header: Vec<&str> = TRACE_COLUMNS.to_vec();
        if extended {
            header.extend(RUN_EXTRA_COLUMNS);
        }
        inner.write_record(&header)?;
        inner.flush()?;
        Ok(Self {
            inner,
            wall_clock,
            extended,
        })
    }

    /// Writes one row; `m_k` overrides the integer sample size (used for means).
    pub fn write(&mut self, row: &IterationRecord, m_k: Option<f64>) -> Result<()> {
        let mut rec = vec![
            row.k.to_string(),
            m_k.map(num).unwrap_or_else(|| row.m_k.to_string()),
            num(row.t_k),
            num(row.variance),
            num(row.w_k),
            row.cum_solves.to_string(),
            opt(row.rel_error),
            if self.wall_clock { num(row.wall_seconds) } else { String::new() },
        ];
        if self.extended {
            rec.extend([
                num(row.residual_norm),
                num(row.rho),
                row.active_gradients.to_string(),
                opt(row.next_threshold),
                opt(row.basis_dim),
                row.greedy_solves.to_string(),
                row.resamples.to_string(),
                u8::from(row.clamped).to_string(),
                row.bound_violations.to_string(),
            ]);
        }
        self.inner.write_record(&rec)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Mean over the seeds that reached iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanRow {
    pub k: usize,
    pub runs: usize,
    pub m_k: f64,
    pub t_k: f64,
    pub variance: f64,
    pub w_k: f64,
    pub cum_solves: f64,
    pub rel_error: Option<f64>,
    pub wall_seconds: f64,
}

pub fn mean_trace(records: &[RunRecord]) -> Vec<MeanRow> {
    let len = records.iter().map(|r| r.rows.len()).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            let rows: Vec<&IterationRecord> = records.iter().filter_map(|r| r.rows.get(k)).collect();
            let n = rows.len() as f64;
            let mean = |f: &dyn Fn(&IterationRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            let rel = if rows.iter().all(|r| r.rel_error.is_some()) {
                Some(mean(&|r| r.rel_error.unwrap_or(0.0)))
            } else {
                None
            };
            MeanRow {
                k,
                runs: rows.len(),
                m_k: mean(&|r| r.m_k as f64),
                t_k: mean(&|r| r.t_k),
                variance: mean(&|r| r.variance),
                w_k: mean(&|r| r.w_k),
                cum_solves: mean(&|r| r.cum_solves as f64),
                rel_error: rel,
                wall_seconds: mean(&|r| r.wall_seconds),
            }
        })
        .collect()
}

pub fn write_mean_trace(path: &Path, records: &[RunRecord], wall_clock: bool) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(TRACE_COLUMNS)?;
    for r in mean_trace(records) {
        w.write_record([
            r.k.to_string(),
            num(r.m_k),
            num(r.t_k),
            num(r.variance),
            num(r.w_k),
            num(r.cum_solves),
            opt(r.rel_error),
            if wall_clock { num(r.wall_seconds) } else { String::new() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Solve-count comparison at matched accuracy for one β.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub problem: String,
    pub beta: f64,
    pub alg1_iterations: f64,
    pub alg2_iterations: f64,
    /// Mean final solve count of the first algorithm.
    pub alg1_solves: f64,
    pub alg1_final_rel_error: Option<f64>,
    /// Mean solves the second algorithm needed to first reach, per seed, the
    /// first algorithm's final error; averaged over matched seeds.
    pub alg2_solves_at_matched_error: Option<f64>,
    pub matched_seeds: usize,
    /// `Σ alg2 solves / Σ alg1 solves` over matched seeds.
    pub solve_ratio: Option<f64>,
    pub time_ratio: Option<f64>,
}

/// First row of `run` whose error is at most `target`.
pub fn first_reaching(run: &RunRecord, target: f64) -> Option<&IterationRecord> {
    run.rows.iter().find(|r| r.rel_error.is_some_and(|e| e <= target))
}

pub fn summarize(problem: &str, beta: f64, alg1: &[RunRecord], alg2: &[RunRecord], wall_clock: bool) -> SummaryRow {
    let mean = |v: &[f64]| if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) };
    let it1: Vec<f64> = alg1.iter().map(|r| r.iterations() as f64).collect();
    let it2: Vec<f64> = alg2.iter().map(|r| r.iterations() as f64).collect();
    let s1: Vec<f64> = alg1.iter().map(|r| r.total_solves() as f64).collect();
    let e1: Vec<f64> = alg1.iter().filter_map(|r| r.rows.last().and_then(|x| x.rel_error)).collect();
    let (mut sum1, mut sum2, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0);
    let mut matched2 = Vec::new();
    for (a, b) in alg1.iter().zip(alg2) {
        let Some(last) = a.rows.last() else { continue };
        let Some(target) = last.rel_error else { continue };
        if let Some(hit) = first_reaching(b, target) {
            sum1 += last.cum_solves as f64;
            sum2 += hit.cum_solves as f64;
            t1 += last.wall_seconds;
            t2 += hit.wall_seconds;
            matched2.push(hit.cum_solves as f64);
        }
    }
    let matched = matched2.len();
    SummaryRow {
        problem: problem.into(),
        beta,
        alg1_iterations: mean(&it1).unwrap_or(0.0),
        alg2_iterations: mean(&it2).unwrap_or(0.0),
        alg1_solves: mean(&s1).unwrap_or(0.0),
        alg1_final_rel_error: mean(&e1),
        alg2_solves_at_matched_error: mean(&matched2),
        matched_seeds: matched,
        solve_ratio: (matched > 0 && sum1 > 0.0).then(|| sum2 / sum1),
        time_ratio: (wall_clock && matched > 0 && t1 > 0.0).then(|| t2 / t1),
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.problem.clone(),
            num(r.beta),
            num(r.alg1_iterations),
            num(r.alg2_iterations),
            num(r.alg1_solves),
            opt(r.alg1_final_rel_error),
            opt(r.alg2_solves_at_matched_error),
            r.matched_seeds.to_string(),
            opt(r.solve_ratio),
            opt(r.time_ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}
