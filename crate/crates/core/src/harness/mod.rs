//! Experiment specs, artifact writing and the commands behind the
//! `ecot-sched` binary.

pub mod cli;
mod commands;
mod spec;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;
use crate::batcher::BatchError;
use crate::metrics::MetricsError;

pub use commands::{
    cmd_batch_demo, cmd_faithfulness, cmd_profile, cmd_simulate, faithfulness_pool, read_trace_logs, run_cells,
    BatchDemoReport, BatchStats, Cell, CellSummary, FaithfulnessCurve, FaithfulnessOutput, SimulateReport,
    FIG5_WORKLOAD, TOKEN_REDUCTION_WORKLOAD,
};
pub use spec::{BackendSpec, ExperimentSpec, FaithfulnessSpec, Overrides, BUNDLED_SPECS};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// 2 for bad input (config, arguments, logs); 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Parse { .. } | HarnessError::Batch(_) => 2,
            _ => 1,
        }
    }
}
