//! Evaluation quantities: update-ratio profiles, latency summaries and
//! action faithfulness.

mod faithfulness;
mod latency;
mod profile;

use thiserror::Error;

use crate::trace::TraceError;

pub use faithfulness::{
    action_faithfulness, action_faithfulness_with_staleness, faithfulness_curve, write_faithfulness_csv, Embedding, FaithfulnessReport,
    FaithfulnessSample, SyntheticPolicy,
};
pub use latency::{latency_summary, LatencySummary, ModeRow, ModeTable, REFERENCE_LATENCY_MS};
pub use profile::{profile_episodes, profile_episodes_with, ProfileReport, RunningStats, StepStats};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no input to summarize")]
    Empty,
    #[error("episode {episode} has {len} timesteps; at least 2 are needed")]
    EpisodeTooShort { episode: usize, len: usize },
    #[error("prefix length {i} outside 0..={n}")]
    PrefixOutOfRange { i: usize, n: usize },
    #[error("policy expects {expected} reasoning steps, trace has {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}
