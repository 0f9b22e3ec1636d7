use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mix_seed, BackendError, BufferedGenerator, Capabilities, GenerationBackend, StepGenerator, StepInput};
use crate::trace::Context;

/// Emits the same content for a step at every timestep, ignoring context,
/// prefix and previous content. Content is a function of the step spec and
/// the seed only, so any scheduling policy must produce identical traces.
#[derive(Debug, Clone)]
pub struct ConstantBackend {
    seed: u64,
}

impl ConstantBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn name_hash(name: &str) -> u64 {
        name.bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
    }
}

impl GenerationBackend for ConstantBackend {
    fn name(&self) -> &str {
        "constant"
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
        let spec = input.step;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
            self.seed,
            Self::name_hash(&spec.name),
            spec.max_tokens as u64,
        ]));
        let len = rng.random_range(1..=spec.max_tokens);
        let tokens = (0..len).map(|_| rng.random::<u32>()).collect();
        Ok(Box::new(BufferedGenerator::new(tokens, spec.max_tokens)))
    }
}
