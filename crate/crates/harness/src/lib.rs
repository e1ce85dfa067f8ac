//! Experiment runner for the mean-field learners: JSON configuration,
//! seeded replicates, per-replicate traces, summaries and manifests.

pub mod config;
pub mod curves;
pub mod experiment;
pub mod output;

pub use config::{ClassSource, ConfigError, ExperimentConfig, Mode};
pub use curves::{emit_curves, read_long};
pub use experiment::{gen_class, run_experiment, trace_file_name, RunReport};

use mfrl_core::MfError;
use thiserror::Error;

/// Version written into, and required of, every output file.
pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Version(String),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] MfError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl HarnessError {
    /// 1 for bad input, 3 for failures inside a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Version(_) | HarnessError::Format(_) => 1,
            _ => 3,
        }
    }
}
