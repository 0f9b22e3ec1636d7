use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::backend::{
    ConstantBackend, GenerationBackend, RemoteBackend, RemoteEndpoint, ReplayBackend, StepProfile, SyntheticBackend,
    SyntheticProfile,
};
use crate::metrics::{Embedding, SyntheticPolicy};
use crate::schedulers::{Clock, SchedulerConfig};
use crate::trace::StepSchema;

/// Which generation backend every cell of an experiment uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    /// Synthetic traces; `steps` defaults to the calibrated profile.
    Synthetic {
        #[serde(default)]
        steps: Option<Vec<StepProfile>>,
    },
    /// Content fixed per step name, ignoring all conditioning.
    Constant,
    Replay {
        path: PathBuf,
    },
    Remote {
        #[serde(default)]
        endpoint: RemoteEndpoint,
    },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Synthetic { steps: None }
    }
}

impl BackendSpec {
    /// Instantiates the backend for one repetition.
    pub fn build(&self, schema: &StepSchema, seed: u64) -> Result<Box<dyn GenerationBackend>, HarnessError> {
        Ok(match self {
            BackendSpec::Synthetic { steps } => {
                let profile = match steps {
                    Some(steps) => SyntheticProfile {
                        seed,
                        steps: steps.clone(),
                    },
                    None => SyntheticProfile::ecot_default(seed),
                };
                Box::new(SyntheticBackend::new(schema, &profile)?)
            }
            BackendSpec::Constant => Box::new(ConstantBackend::new(seed)),
            BackendSpec::Replay { path } => Box::new(ReplayBackend::from_log(path)?),
            BackendSpec::Remote { endpoint } => Box::new(RemoteBackend::new(endpoint.clone().with_env_override())?),
        })
    }
}

/// Synthetic policy used by the faithfulness command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaithfulnessSpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// One row per reasoning step; defaults to weights growing with step
    /// index.
    #[serde(default)]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub base: Option<Vec<f64>>,
    #[serde(default)]
    pub context_weight: f64,
    #[serde(default)]
    pub embedding: Embedding,
    #[serde(default = "default_decay")]
    pub staleness_decay: f64,
}

fn default_samples() -> usize {
    200
}

fn default_decay() -> f64 {
    0.5
}

impl Default for FaithfulnessSpec {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            weights: None,
            base: None,
            context_weight: 0.0,
            embedding: Embedding::Unit,
            staleness_decay: default_decay(),
        }
    }
}

impl FaithfulnessSpec {
    pub fn policy(&self, num_steps: usize, dim: usize) -> Result<SyntheticPolicy, HarnessError> {
        let weights = self
            .weights
            .clone()
            .unwrap_or_else(|| SyntheticPolicy::increasing(num_steps, dim).weights);
        let base = self.base.clone().unwrap_or_else(|| vec![0.0; dim]);
        let policy = SyntheticPolicy {
            base,
            weights,
            context_weight: self.context_weight,
            embedding: self.embedding,
            staleness_decay: self.staleness_decay,
        };
        policy
            .validate()
            .map_err(|e| HarnessError::Config(format!("faithfulness: {e}")))?;
        if policy.num_steps() != num_steps {
            return Err(HarnessError::Config(format!(
                "faithfulness.weights: {} rows for {num_steps} reasoning steps",
                policy.num_steps()
            )));
        }
        if policy.dim() != dim {
            return Err(HarnessError::Config(format!(
                "faithfulness.base: dimension {} but actions have {dim}",
                policy.dim()
            )));
        }
        Ok(policy)
    }
}

/// One comparative experiment: every mode runs every repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default = "default_instruction")]
    pub instruction: String,
    pub timesteps: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: u64,
    /// Repetition `r` runs with seed `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "StepSchema::ecot_default")]
    pub schema: StepSchema,
    #[serde(default)]
    pub backend: BackendSpec,
    pub modes: Vec<SchedulerConfig>,
    #[serde(default)]
    pub faithfulness: FaithfulnessSpec,
}

fn default_instruction() -> String {
    "put the bowl on the plate".into()
}

fn default_repetitions() -> u64 {
    1
}

/// Values that take precedence over the spec file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub wall_clock: bool,
    pub timesteps: Option<u64>,
    pub repetitions: Option<u64>,
    pub samples: Option<usize>,
}

pub const BUNDLED_SPECS: [(&str, &str); 6] = [
    ("minimal", include_str!("../../specs/minimal.toml")),
    ("fig5", include_str!("../../specs/fig5.toml")),
    ("table1", include_str!("../../specs/table1.toml")),
    ("table1-ratios", include_str!("../../specs/table1.toml")),
    ("fig2-profile", include_str!("../../specs/fig2-profile.toml")),
    ("faithfulness", include_str!("../../specs/faithfulness.toml")),
];

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string().trim_end().to_owned()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn bundled(name: &str) -> Result<Self, HarnessError> {
        let text = BUNDLED_SPECS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let known: Vec<&str> = BUNDLED_SPECS.iter().map(|(n, _)| *n).collect();
                HarnessError::Config(format!("spec: unknown bundled spec {name:?} (known: {})", known.join(", ")))
            })?;
        Self::from_toml(text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), HarnessError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(t) = o.timesteps {
            self.timesteps = t;
        }
        if let Some(r) = o.repetitions {
            self.repetitions = r;
        }
        if let Some(s) = o.samples {
            self.faithfulness.samples = s;
        }
        if o.wall_clock {
            for m in &mut self.modes {
                m.clock = Clock::Wall;
            }
        }
        self.validate()
    }

    pub fn out_root(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.name.trim().is_empty() {
            return fail("name: must not be empty".into());
        }
        if self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return fail("name: must be a single path component".into());
        }
        if self.timesteps == 0 {
            return fail("timesteps: must be at least 1".into());
        }
        if self.repetitions == 0 {
            return fail("repetitions: must be at least 1".into());
        }
        if self.modes.is_empty() {
            return fail("modes: at least one scheduler config is required".into());
        }
        let mut labels = HashSet::new();
        for (i, m) in self.modes.iter().enumerate() {
            if let Err(e) = m.validate() {
                return fail(format!("modes[{i}]: {e}"));
            }
            if !labels.insert(m.label()) {
                return fail(format!("modes[{i}]: duplicate mode label {:?}", m.label()));
            }
        }
        if self.faithfulness.samples == 0 {
            return fail("faithfulness.samples: must be at least 1".into());
        }
        if let BackendSpec::Synthetic { steps: Some(steps) } = &self.backend {
            let profile = SyntheticProfile {
                seed: 0,
                steps: steps.clone(),
            };
            if let Err(e) = profile.aligned(&self.schema) {
                return fail(format!("backend.steps: {e}"));
            }
        }
        Ok(())
    }
}
