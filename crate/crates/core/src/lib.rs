pub mod density;
pub mod experiment;
pub mod metrics;
pub mod moments;
pub mod oracle;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod target;

use std::path::PathBuf;

/// Top-level error for config-driven runs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Schedule(#[from] schedule::ScheduleError),
    #[error("target file {path}")]
    TargetFile {
        path: PathBuf,
        #[source]
        source: target::TargetError,
    },
    #[error(transparent)]
    Target(#[from] target::TargetError),
    #[error(transparent)]
    Density(#[from] density::DensityError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
}
