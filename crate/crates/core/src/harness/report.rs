use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::runner::Trajectory;
use crate::error::{Error, Result};

pub const ROUNDS_HEADER: [&str; 9] = [
    "replicate",
    "t",
    "algorithm",
    "action",
    "loss",
    "pseudo_regret_cum",
    "realized_regret_cum",
    "m_hat",
    "explored",
];

/// Mean cumulative regret of one algorithm at one round, across replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub t: usize,
    pub mean_pseudo_regret: f64,
    pub se_pseudo_regret: f64,
    pub mean_realized_regret: f64,
    pub se_realized_regret: f64,
    pub n_reps: usize,
    /// Set when fewer than two replicates make the standard error meaningless.
    pub se_degenerate: bool,
}

/// Powers of two up to `horizon`, plus `horizon` itself.
pub fn t_grid(horizon: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = std::iter::successors(Some(1usize), |t| t.checked_mul(2))
        .take_while(|t| *t <= horizon)
        .collect();
    if grid.last() != Some(&horizon) && horizon > 0 {
        grid.push(horizon);
    }
    grid
}

/// Mean and `sd/√n` with the `n − 1` sample deviation; `se = 0` when `n < 2`.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn algorithms_in_order(trajs: &[Trajectory]) -> Vec<String> {
    let mut seen = Vec::<String>::new();
    for tr in trajs {
        if !seen.contains(&tr.algorithm) {
            seen.push(tr.algorithm.clone());
        }
    }
    seen
}

/// Summary rows per algorithm (first-appearance order) on the log grid.
pub fn summarize(trajs: &[Trajectory]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for alg in algorithms_in_order(trajs) {
        let runs: Vec<&Trajectory> = trajs.iter().filter(|t| t.algorithm == alg).collect();
        let horizon = runs.iter().map(|r| r.records.len()).min().unwrap_or(0);
        for t in t_grid(horizon) {
            let pseudo: Vec<f64> = runs
                .iter()
                .map(|r| r.records[t - 1].pseudo_regret_cum)
                .collect();
            let realized: Vec<f64> = runs
                .iter()
                .map(|r| r.records[t - 1].realized_regret_cum)
                .collect();
            let (mp, sp) = mean_and_se(&pseudo);
            let (mr, sr) = mean_and_se(&realized);
            rows.push(SummaryRow {
                algorithm: alg.clone(),
                t,
                mean_pseudo_regret: mp,
                se_pseudo_regret: sp,
                mean_realized_regret: mr,
                se_realized_regret: sr,
                n_reps: runs.len(),
                se_degenerate: runs.len() < 2,
            });
        }
    }
    rows
}

/// Final-round row of each algorithm.
pub fn final_rows(rows: &[SummaryRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|o| o.algorithm == r.algorithm) {
            Some(o) if r.t > o.t => *o = r.clone(),
            Some(_) => {}
            None => out.push(r.clone()),
        }
    }
    out
}

/// Best final row per base name, where a swept label `Name[p=v]` has base `Name`.
pub fn best_per_base(rows: &[SummaryRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    for r in final_rows(rows) {
        let base = base_name(&r.algorithm);
        match out.iter_mut().find(|o| base_name(&o.algorithm) == base) {
            Some(o) if r.mean_pseudo_regret < o.mean_pseudo_regret => *o = r,
            Some(_) => {}
            None => out.push(r),
        }
    }
    out
}

pub fn base_name(label: &str) -> &str {
    label.split('[').next().unwrap_or(label)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Per-round log in replicate order, then configuration order.
pub fn write_rounds<W: Write>(w: W, trajs: &[Trajectory]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(ROUNDS_HEADER)?;
    let mut ordered: Vec<&Trajectory> = trajs.iter().collect();
    ordered.sort_by_key(|t| t.replicate);
    for tr in ordered {
        for r in &tr.records {
            out.write_record([
                tr.replicate.to_string(),
                r.t.to_string(),
                tr.algorithm.clone(),
                r.action.to_string(),
                r.loss.to_string(),
                r.pseudo_regret_cum.to_string(),
                r.realized_regret_cum.to_string(),
                r.m_hat.to_string(),
                r.explored.to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("rounds output", e))?;
    Ok(())
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut out = writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("summary output", e))?;
    Ok(())
}

pub fn write_rounds_file(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_rounds(std::io::BufWriter::new(f), trajs)
}

pub fn write_summary_file(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_summary(std::io::BufWriter::new(f), rows)
}
