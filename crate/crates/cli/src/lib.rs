//! Experiment runner: resolves a configuration, runs both algorithms over
//! seeds and risk levels, and writes plot-ready CSV.

pub mod config;
pub mod experiment;
pub mod output;

pub use config::{AlgChoice, Args, ExperimentConfig, FileConfig, Scale};
pub use experiment::{run_experiment, run_single, ExperimentOutcome, ProblemModel};
