use std::io;

use serde::Serialize;

use super::MetricsError;
use crate::trace::{trace_update_ratio_with, RatioGranularity, ReasoningTrace};

/// Streaming mean and population variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn population_std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        iter.into_iter().for_each(|x| s.push(x));
        s
    }
}

/// Per reasoning step statistics. Standard deviations are population ones.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepStats {
    pub name: String,
    pub ratio_mean: f64,
    pub ratio_std: f64,
    pub length_mean: f64,
    pub length_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileReport {
    pub steps: Vec<StepStats>,
    /// Consecutive timestep pairs that contributed update ratios.
    pub transitions: u64,
    /// Timesteps that contributed lengths.
    pub timesteps: u64,
}

impl ProfileReport {
    pub fn step(&self, name: &str) -> Option<&StepStats> {
        self.steps.iter().find(|s| s.name == name)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.steps {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Token-level update-ratio and length profile over episodes.
pub fn profile_episodes(episodes: &[Vec<ReasoningTrace>]) -> Result<ProfileReport, MetricsError> {
    profile_episodes_with(episodes, RatioGranularity::Token)
}

pub fn profile_episodes_with(
    episodes: &[Vec<ReasoningTrace>],
    granularity: RatioGranularity,
) -> Result<ProfileReport, MetricsError> {
    let first = episodes.first().and_then(|e| e.first()).ok_or(MetricsError::Empty)?;
    let names: Vec<String> = first.reasoning().iter().map(|s| s.name.clone()).collect();
    let mut ratios = vec![RunningStats::default(); names.len()];
    let mut lengths = vec![RunningStats::default(); names.len()];
    let mut transitions = 0;
    let mut timesteps = 0;

    for (e, episode) in episodes.iter().enumerate() {
        if episode.len() < 2 {
            return Err(MetricsError::EpisodeTooShort {
                episode: e,
                len: episode.len(),
            });
        }
        for trace in episode {
            let reasoning = trace.reasoning();
            if reasoning.len() != names.len() {
                return Err(MetricsError::ShapeMismatch {
                    expected: names.len(),
                    actual: reasoning.len(),
                });
            }
            for (stats, step) in lengths.iter_mut().zip(reasoning) {
                stats.push(step.tokens.len() as f64);
            }
            timesteps += 1;
        }
        for pair in episode.windows(2) {
            let per_step = trace_update_ratio_with(&pair[0], &pair[1], granularity)?;
            for (stats, (_, r)) in ratios.iter_mut().zip(per_step) {
                stats.push(r);
            }
            transitions += 1;
        }
    }

    let steps = names
        .into_iter()
        .zip(ratios.iter().zip(&lengths))
        .map(|(name, (r, l))| StepStats {
            name,
            ratio_mean: r.mean(),
            ratio_std: r.population_std(),
            length_mean: l.mean(),
            length_std: l.population_std(),
        })
        .collect();
    Ok(ProfileReport {
        steps,
        transitions,
        timesteps,
    })
}
