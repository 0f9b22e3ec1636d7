use std::collections::BTreeMap;
use std::io;
use std::time::Instant;

use serde::Serialize;

use super::{SchedError, Scheduler, StepResult};
use crate::trace::{serialize_trace, ReasoningTrace, TraceRecord};

/// Instruction plus a deterministic observation stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeInput {
    pub instruction: String,
    pub seed: u64,
    pub timesteps: u64,
}

impl EpisodeInput {
    pub fn new(instruction: impl Into<String>, seed: u64, timesteps: u64) -> Self {
        Self {
            instruction: instruction.into(),
            seed,
            timesteps,
        }
    }

    /// Observation bytes for timestep `t`: seed then timestep, little-endian.
    pub fn observation(&self, t: u64) -> Vec<u8> {
        let mut out = self.seed.to_le_bytes().to_vec();
        out.extend_from_slice(&t.to_le_bytes());
        out
    }
}

/// Why an episode stopped early.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Abort {
    pub timestep: u64,
    pub step: Option<String>,
    pub message: String,
    #[serde(skip)]
    pub partial: Option<ReasoningTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimestepRow {
    pub timestep: u64,
    pub latency_ms: f64,
    pub tokens_generated: u64,
    pub failures: u32,
    pub cache_version: u64,
    pub max_staleness: u64,
}

#[derive(Debug, Clone)]
pub struct EpisodeReport {
    pub label: String,
    pub results: Vec<StepResult>,
    /// Wall time spent in each completed timestep, encoding included.
    pub wall_ms: Vec<f64>,
    pub aborted: Option<Abort>,
    pub background_failures: u64,
}

impl EpisodeReport {
    pub fn latencies(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.latency_ms).collect()
    }

    pub fn mean_latency(&self) -> Option<f64> {
        (!self.results.is_empty()).then(|| self.latencies().iter().sum::<f64>() / self.results.len() as f64)
    }

    pub fn total_tokens(&self) -> u64 {
        self.results.iter().map(|r| r.tokens_generated).sum()
    }

    pub fn total_failures(&self) -> u64 {
        self.results.iter().map(|r| u64::from(r.failures)).sum()
    }

    pub fn rows(&self) -> Vec<TimestepRow> {
        self.results
            .iter()
            .map(|r| TimestepRow {
                timestep: r.trace.timestep,
                latency_ms: r.latency_ms,
                tokens_generated: r.tokens_generated,
                failures: r.failures,
                cache_version: r.cache_version,
                max_staleness: r.staleness.iter().copied().max().unwrap_or(0),
            })
            .collect()
    }

    /// Count of (step, timestep) pairs by staleness, over reasoning steps.
    pub fn staleness_histogram(&self) -> BTreeMap<u64, u64> {
        let mut out = BTreeMap::new();
        for r in &self.results {
            for &s in &r.staleness[..r.staleness.len().saturating_sub(1)] {
                *out.entry(s).or_insert(0) += 1;
            }
        }
        out
    }

    /// Log records. The `wall_ms` field carries the reported latency, so
    /// logs from the simulated clock are reproducible byte for byte.
    pub fn trace_records(&self) -> Vec<TraceRecord> {
        self.results
            .iter()
            .map(|r| TraceRecord {
                trace: r.trace.clone(),
                wall_ms: r.latency_ms,
            })
            .collect()
    }

    /// JSONL trace log, one line per completed timestep.
    pub fn write_trace_log<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        for rec in self.trace_records() {
            out.write_all(&serialize_trace(&rec))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_timesteps_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `input.timesteps` timesteps. A failed step under the abort policy
/// ends the episode; the completed timesteps are kept.
pub fn run_episode(scheduler: &mut Scheduler<'_>, input: &EpisodeInput) -> EpisodeReport {
    let mut results = Vec::new();
    let mut wall_ms = Vec::new();
    let mut aborted = None;
    for t in 0..input.timesteps {
        let started = Instant::now();
        match scheduler.step_observed(&input.instruction, &input.observation(t)) {
            Ok(r) => {
                wall_ms.push(started.elapsed().as_secs_f64() * 1e3);
                results.push(r);
            }
            Err(e) => {
                let (step, partial) = match &e {
                    SchedError::StepFailed { step, partial, .. } => (Some(step.clone()), Some((**partial).clone())),
                    _ => (None, None),
                };
                aborted = Some(Abort {
                    timestep: t,
                    step,
                    message: e.to_string(),
                    partial,
                });
                break;
            }
        }
    }
    EpisodeReport {
        label: scheduler.config().label(),
        results,
        wall_ms,
        aborted,
        background_failures: scheduler.background_failures(),
    }
}
