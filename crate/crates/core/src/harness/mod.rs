//! Monte-Carlo sweeps over SNR, pilot length and rank bound.

mod config;
mod metrics;
mod output;
mod runner;

pub use config::{Algorithm, BcdStop, Execution, ExperimentConfig, ViStop, THREADS_ENV};
pub use metrics::mse;
pub use output::{
    emit_results, format_timing_table, read_results, timing_summary, write_results, TimingSummary,
    CSV_HEADER,
};
pub use runner::{run_cell, run_monte_carlo, run_trial, ResultRow, TrialData};
