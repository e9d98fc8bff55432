//! Open-set experiment harness: config, sweep and reporting.

mod config;
mod report;
mod run;

pub use config::{ExperimentConfig, OsrSplit};
pub use report::{
    emit_report, Aggregate, CellReport, EvalReport, NamedOutcome, Outcome, ReportFormat, RunReport,
    SampleCounts,
};
pub use run::{run_experiment, EPISTEMIC_UNCERTAINTY, TOTAL_UNCERTAINTY};

use crate::detectors::DetectorError;
use crate::eds::EdsError;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "OODKIT_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Eds(#[from] EdsError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Worker count: the smallest of the config value, `OODKIT_THREADS` and an
/// explicit request, falling back to the available parallelism.
pub fn effective_threads(config: Option<usize>, requested: Option<usize>) -> Result<usize, HarnessError> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| HarnessError::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?,
        ),
        _ => None,
    };
    if requested == Some(0) {
        return Err(HarnessError::Config("thread count must be >= 1".into()));
    }
    Ok([config, env, requested]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}
