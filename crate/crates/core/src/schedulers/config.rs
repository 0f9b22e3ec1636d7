use std::fmt;

use serde::{Deserialize, Serialize};

use crate::batcher::LatencyModel;
use crate::trace::DEFAULT_ACTION_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every step generated in order, each conditioned on the steps before
    /// it at the same timestep.
    Sequential,
    /// All steps generated concurrently from the previous timestep's
    /// prefixes, joined at a barrier before decoding.
    ParallelSync,
    /// As `ParallelSync`, but the timestep returns as soon as the action is
    /// decoded; reasoning lands in the shared cache in the background.
    ParallelAsync,
    /// Low-level steps and the action every timestep; high-level steps only
    /// every `k` timesteps.
    KStep,
    /// A background track keeps regenerating high-level steps while the
    /// foreground track produces low-level steps and the action.
    TwoTrack,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Sequential,
        Mode::ParallelSync,
        Mode::ParallelAsync,
        Mode::KStep,
        Mode::TwoTrack,
    ];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sequential => "sequential",
            Mode::ParallelSync => "parallel_sync",
            Mode::ParallelAsync => "parallel_async",
            Mode::KStep => "k_step",
            Mode::TwoTrack => "two_track",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Substitute the last known content for a failed step.
    #[default]
    ReuseStale,
    AbortEpisode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Latency from the iteration cost model.
    #[default]
    Simulated,
    /// Latency measured with a monotonic wall clock.
    Wall,
}

/// `k` used by [`Mode::KStep`] to mean "never refresh after warm-up".
pub const K_NEVER: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    pub mode: Mode,
    #[serde(default = "default_k")]
    pub k: u64,
    #[serde(default = "default_slots")]
    pub slots: usize,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
    #[serde(default)]
    pub clock: Clock,
    /// Two-track only: run the background high-level track.
    #[serde(default = "default_true")]
    pub high_level_track: bool,
    #[serde(default = "default_action_dim")]
    pub action_dim: usize,
}

fn default_k() -> u64 {
    5
}

fn default_slots() -> usize {
    8
}

fn default_true() -> bool {
    true
}

fn default_action_dim() -> usize {
    DEFAULT_ACTION_DIM
}

impl SchedulerConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            k: default_k(),
            slots: default_slots(),
            latency: LatencyModel::default(),
            failure_policy: FailurePolicy::default(),
            clock: Clock::default(),
            high_level_track: true,
            action_dim: DEFAULT_ACTION_DIM,
        }
    }

    pub fn k_step(k: u64) -> Self {
        Self {
            k,
            ..Self::new(Mode::KStep)
        }
    }

    pub fn with_slots(mut self, slots: usize) -> Self {
        self.slots = slots;
        self
    }

    pub fn with_latency(mut self, latency: LatencyModel) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_failure_policy(mut self, policy: FailurePolicy) -> Self {
        self.failure_policy = policy;
        self
    }

    /// Name used for output directories and report rows.
    pub fn label(&self) -> String {
        match self.mode {
            Mode::KStep if self.k == K_NEVER => "k_step_inf".into(),
            Mode::KStep => format!("k_step_{}", self.k),
            Mode::TwoTrack if !self.high_level_track => "two_track_low_only".into(),
            m => m.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if self.slots == 0 {
            return Err("slots must be at least 1".into());
        }
        if self.action_dim == 0 {
            return Err("action_dim must be at least 1".into());
        }
        self.latency.validate().map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(SchedulerConfig::new(Mode::ParallelAsync).label(), "parallel_async");
        assert_eq!(SchedulerConfig::k_step(5).label(), "k_step_5");
        assert_eq!(SchedulerConfig::k_step(K_NEVER).label(), "k_step_inf");
    }

    #[test]
    fn validation() {
        assert!(SchedulerConfig::k_step(0).validate().is_err());
        assert!(SchedulerConfig::new(Mode::Sequential).with_slots(0).validate().is_err());
        assert!(SchedulerConfig::new(Mode::Sequential).validate().is_ok());
    }

    #[test]
    fn parses_from_toml() {
        let cfg: SchedulerConfig = toml::from_str("mode = \"k_step\"\nk = 3\n[latency]\nc_iter = 1.0\n").unwrap();
        assert_eq!(cfg.mode, Mode::KStep);
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.latency.c_iter, 1.0);
        assert_eq!(cfg.latency.c_slot, LatencyModel::default().c_slot);
        assert!(toml::from_str::<SchedulerConfig>("mode = \"k_step\"\nbogus = 1\n").is_err());
    }
}
