//! Token-generation backends.
//!
//! A backend hands out one [`StepGenerator`] per in-flight step request.
//! Generators emit exactly one token per [`StepGenerator::next_token`] call,
//! which lets the batcher account for every engine iteration.

mod constant;
mod remote;
mod replay;
pub mod stub;
mod synthetic;

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::trace::{Context, StepSpec, TokenSeq};

pub use constant::ConstantBackend;
pub use remote::{Completion, RemoteBackend, RemoteEndpoint, REMOTE_URL_ENV};
pub use replay::ReplayBackend;
pub use synthetic::{StepProfile, SyntheticBackend, SyntheticProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("{endpoint}: connection failed: {message}")]
    Connection { endpoint: String, message: String },
    #[error("{endpoint}: request timed out")]
    Timeout { endpoint: String },
    #[error("{endpoint}: HTTP status {status}")]
    Status { endpoint: String, status: u16 },
    #[error("{endpoint}: malformed response: {message}")]
    Malformed { endpoint: String, message: String },
    #[error("{endpoint}: gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        endpoint: String,
        attempts: u32,
        last: Box<BackendError>,
    },
    #[error("replay: {0}")]
    Replay(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("generator already finished")]
    Exhausted,
    #[error("injected failure: {0}")]
    Injected(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Connection { .. } | BackendError::Timeout { .. } => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub deterministic: bool,
    pub supports_prefix_conditioning: bool,
}

/// Everything a backend may condition a step on.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub timestep: u64,
    pub step_index: usize,
    pub step: &'a StepSpec,
    pub context: &'a Context,
    /// Concatenated content of the steps that precede this one.
    pub prefix: &'a TokenSeq,
    /// This step's content at the previous timestep (empty when none).
    pub prev_content: &'a TokenSeq,
}

pub trait StepGenerator: Send {
    /// True once the final token has been emitted. May block for backends
    /// whose sequence length is only known after the response arrives.
    fn is_finished(&mut self) -> Result<bool, BackendError>;

    fn next_token(&mut self) -> Result<u32, BackendError>;

    /// Set when the content was cut at the step's token budget.
    fn truncated(&self) -> bool;

    /// Set when the generator replays `prev_content` verbatim.
    fn reused(&self) -> bool {
        false
    }
}

pub trait GenerationBackend: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    fn encode(&self, instruction: &str, observation: &[u8]) -> Result<Context, BackendError>;

    fn begin_step(&self, input: &StepInput<'_>) -> Result<Box<dyn StepGenerator>, BackendError>;

    fn metrics(&self) -> BackendMetrics {
        BackendMetrics::default()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackendMetrics {
    pub requests: u64,
    pub retries: u64,
    pub failures: u64,
}

#[derive(Debug, Default)]
pub(crate) struct MetricCounters {
    requests: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
}

impl MetricCounters {
    pub(crate) fn request(&self) {
        self.requests.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn retry(&self) {
        self.retries.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn failure(&self) {
        self.failures.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn snapshot(&self) -> BackendMetrics {
        BackendMetrics {
            requests: self.requests.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
        }
    }
}

/// Generator over a sequence that is fully known up front.
#[derive(Debug, Clone)]
pub struct BufferedGenerator {
    tokens: Vec<u32>,
    pos: usize,
    truncated: bool,
    reused: bool,
}

impl BufferedGenerator {
    /// Cuts `tokens` at `budget`, flagging truncation when it bites.
    pub fn new(mut tokens: Vec<u32>, budget: usize) -> Self {
        let truncated = tokens.len() > budget;
        tokens.truncate(budget);
        Self {
            tokens,
            pos: 0,
            truncated,
            reused: false,
        }
    }

    pub fn reusing(mut self) -> Self {
        self.reused = true;
        self
    }
}

impl StepGenerator for BufferedGenerator {
    fn is_finished(&mut self) -> Result<bool, BackendError> {
        Ok(self.pos >= self.tokens.len())
    }

    fn next_token(&mut self) -> Result<u32, BackendError> {
        let t = *self.tokens.get(self.pos).ok_or(BackendError::Exhausted)?;
        self.pos += 1;
        Ok(t)
    }

    fn truncated(&self) -> bool {
        self.truncated
    }

    fn reused(&self) -> bool {
        self.reused
    }
}

/// Drains a generator into a token sequence.
pub fn collect(generator: &mut dyn StepGenerator) -> Result<TokenSeq, BackendError> {
    let mut out = TokenSeq::default();
    while !generator.is_finished()? {
        out.push(generator.next_token()?);
    }
    Ok(out)
}

/// SplitMix64 fold over a list of words; used to derive per-request seeds.
pub fn mix_seed(words: &[u64]) -> u64 {
    let mut state = 0x243F_6A88_85A3_08D3u64;
    for &w in words {
        state ^= w;
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}
