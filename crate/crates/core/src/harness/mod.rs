//! Experiment configuration, seeded replicate runs, summaries and the CLI.

pub mod cli;
pub mod config;
pub mod report;
pub mod runner;

pub use config::{AlgorithmSpec, ExperimentConfig, ModCbSettings};
pub use report::{summarize, t_grid, SummaryRow};
pub use runner::{run_all, run_experiment, run_replicate, RoundRecord, Trajectory};
