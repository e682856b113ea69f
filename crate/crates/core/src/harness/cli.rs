use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

use super::config::ExperimentConfig;
use super::report::{
    best_per_base, final_rows, summarize, write_rounds_file, write_summary_file, SummaryRow,
};
use super::runner::{run_experiment, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::residual::estimate_residual_rows;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "modsel",
    version,
    about = "Model selection for linear contextual bandits: simulations and gap estimates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured algorithm and write rounds.csv and summary.csv.
    Simulate {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's base_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's output_path, then "out".
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one copy of each algorithm per value of a hyperparameter and report
    /// the best value per algorithm.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Parameter name, optionally qualified by kind (e.g. `LinUCB.premultiplier`).
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the square-loss gap from labeled samples and second moments.
    EstimateGap {
        /// Headerless CSV, one sample per row: d feature values then the label.
        #[arg(long)]
        samples: PathBuf,
        /// Headerless CSV holding the d×d second moment.
        #[arg(long)]
        sigma: PathBuf,
        /// Headerless CSV holding the d1×d1 restricted second moment.
        #[arg(long)]
        sigma1: PathBuf,
        /// Restricted dimension.
        #[arg(long)]
        d1: usize,
    },
}

/// Parses `argv` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Simulate { config, seed, out } => load(&config, seed)
            .and_then(|cfg| simulate(&cfg, out.as_deref()).map(|rows| print_final(&rows))),
        Command::Sweep {
            config,
            param,
            values,
            seed,
            out,
        } => load(&config, seed)
            .and_then(|cfg| cfg.sweep(&param, &values))
            .and_then(|cfg| simulate(&cfg, out.as_deref()))
            .map(|rows| {
                print_final(&rows);
                println!("best per algorithm:");
                print_rows(&best_per_base(&rows));
            }),
        Command::EstimateGap {
            samples,
            sigma,
            sigma1,
            d1,
        } => estimate_gap(&samples, &sigma, &sigma1, d1).map(|e| println!("{e:?}")),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io { .. } | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    Ok(cfg)
}

/// Runs the experiment, writes both CSVs, and returns the summary rows. Runs
/// that fail do not stop the others; their error is returned after the
/// completed runs are written.
pub fn simulate(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<SummaryRow>> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_path.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut done: Vec<Trajectory> = Vec::new();
    let mut first_err = None;
    for r in run_experiment(cfg) {
        match r {
            Ok(t) => done.push(t),
            Err(e) => {
                eprintln!("error: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    let rows = summarize(&done);
    write_rounds_file(&dir.join("rounds.csv"), &done).map_err(runtime_io)?;
    write_summary_file(&dir.join("summary.csv"), &rows).map_err(runtime_io)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

// Failing to write results after a successful run is a runtime failure, not a
// configuration problem.
fn runtime_io(e: Error) -> Error {
    match e {
        Error::Io { path, source } => Error::Runtime(format!("writing {path}: {source}")),
        other => other,
    }
}

fn print_rows(rows: &[SummaryRow]) {
    for r in rows {
        println!(
            "{:<32} t={:<7} pseudo_regret={:.3} ± {:.3} (n={})",
            r.algorithm, r.t, r.mean_pseudo_regret, r.se_pseudo_regret, r.n_reps
        );
    }
}

fn print_final(rows: &[SummaryRow]) {
    print_rows(&final_rows(rows));
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{}: {other:?}", path.display())),
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!(
            "{}: empty or ragged matrix",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn estimate_gap(samples: &Path, sigma: &Path, sigma1: &Path, d1: usize) -> Result<f64> {
    let data = read_matrix(samples)?;
    let s = read_matrix(sigma)?;
    let s1 = read_matrix(sigma1)?;
    let d = data.ncols().saturating_sub(1);
    if s.shape() != (d, d) {
        return Err(Error::Config(format!(
            "sigma is {}x{} but samples have {d} features",
            s.nrows(),
            s.ncols()
        )));
    }
    if s1.shape() != (d1, d1) {
        return Err(Error::Config(format!(
            "sigma1 is {}x{} but --d1 is {d1}",
            s1.nrows(),
            s1.ncols()
        )));
    }
    let xs = data.columns(0, d).into_owned();
    let ys: Vec<f64> = data.column(d).iter().copied().collect();
    let to_config = |e: Error| match e {
        Error::InvalidInput(m) => Error::Config(m),
        other => other,
    };
    let sigma = SymMatrix::new(s).map_err(to_config)?;
    let sigma1 = SymMatrix::new(s1).map_err(to_config)?;
    estimate_residual_rows(&xs, &ys, &sigma1, &sigma).map_err(to_config)
}
