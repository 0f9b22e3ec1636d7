use std::collections::BTreeMap;
use std::path::Path;

use super::{BackendError, BufferedGenerator, Capabilities, GenerationBackend, StepGenerator, StepInput};
use crate::trace::{deserialize_trace, Context, ReasoningTrace};

/// Replays step contents from a recorded episode, keyed by timestep.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    traces: BTreeMap<u64, ReasoningTrace>,
}

impl ReplayBackend {
    pub fn new(traces: impl IntoIterator<Item = ReasoningTrace>) -> Self {
        Self {
            traces: traces.into_iter().map(|t| (t.timestep, t)).collect(),
        }
    }

    /// Loads a line-delimited trace log. Later records for a timestep win.
    pub fn from_log(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Replay(format!("{}: {e}", path.display())))?;
        let mut traces = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec = deserialize_trace(line.as_bytes())
                .map_err(|e| BackendError::Replay(format!("{}:{}: {e}", path.display(), n + 1)))?;
            traces.push(rec.trace);
        }
        Ok(Self::new(traces))
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }
}

impl GenerationBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            deterministic: true,
            supports_prefix_conditioning: false,
        }
    }

    fn encode(&self, instruction: &str, observation: &[u8]) -> Result<Context, BackendError> {
        Ok(Context::hashed(instruction, observation))
    }

    fn begin_step(&self, input: &StepInput<'_>) -> Result<Box<dyn StepGenerator>, BackendError> {
        let trace = self
            .traces
            .get(&input.timestep)
            .ok_or_else(|| BackendError::Replay(format!("no recorded timestep {}", input.timestep)))?;
        let step = trace.steps.get(input.step_index).ok_or_else(|| {
            BackendError::Replay(format!("timestep {} has no step {}", input.timestep, input.step_index))
        })?;
        if step.name != input.step.name {
            return Err(BackendError::Replay(format!(
                "timestep {} step {} is {:?}, expected {:?}",
                input.timestep, input.step_index, step.name, input.step.name
            )));
        }
        Ok(Box::new(BufferedGenerator::new(
            step.tokens.as_slice().to_vec(),
            input.step.max_tokens,
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::collect;
    use crate::trace::{StepSchema, TokenSeq};

    #[test]
    fn replays_logged_content() {
        let schema = StepSchema::ecot_default();
        let mut traces = Vec::new();
        for t in 0..3u64 {
            let mut tr = schema.empty_trace(t);
            for (i, s) in tr.steps.iter_mut().enumerate() {
                s.tokens = TokenSeq::new((0..(i % 4 + t as usize + 1)).map(|k| (k * 10 + i) as u32).collect());
            }
            traces.push(tr);
        }
        let b = ReplayBackend::new(traces.clone());
        let ctx = b.encode("x", b"y").unwrap();
        for tr in &traces {
            for (i, spec) in schema.steps().iter().enumerate() {
                let mut g = b
                    .begin_step(&StepInput {
                        timestep: tr.timestep,
                        step_index: i,
                        step: spec,
                        context: &ctx,
                        prefix: &TokenSeq::default(),
                        prev_content: &TokenSeq::default(),
                    })
                    .unwrap();
                assert_eq!(&collect(g.as_mut()).unwrap(), &tr.steps[i].tokens);
            }
        }
        let missing = b.begin_step(&StepInput {
            timestep: 9,
            step_index: 0,
            step: &schema.steps()[0],
            context: &ctx,
            prefix: &TokenSeq::default(),
            prev_content: &TokenSeq::default(),
        });
        assert!(matches!(missing, Err(BackendError::Replay(_))));
    }
}
