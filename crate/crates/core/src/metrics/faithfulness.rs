use std::io;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::profile::RunningStats;
use super::MetricsError;
use crate::trace::{ActionVector, Context, ReasoningTrace, TokenSeq};

/// Map from a step's tokens to an action-shaped contribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embedding {
    /// All ones for any non-empty step, zeros for an empty one.
    #[default]
    Unit,
    /// Content-dependent components in `[0, 1]`.
    Hashed,
}

impl Embedding {
    fn embed(self, tokens: &TokenSeq, dim: usize) -> Vec<f64> {
        if tokens.is_empty() {
            return vec![0.0; dim];
        }
        match self {
            Embedding::Unit => vec![1.0; dim],
            Embedding::Hashed => {
                let d = tokens.digest();
                (0..dim as u64)
                    .map(|k| {
                        let h = crate::backend::mix_seed(&[d, k]);
                        (h >> 11) as f64 / (1u64 << 53) as f64
                    })
                    .collect()
            }
        }
    }
}

/// Stand-in policy whose dependence on each reasoning step is known:
///
/// `A = base + context_weight · emb(ctx) + Σ_j w_j ⊙ emb(step_j) · decay^staleness_j`
///
/// where the sum runs over the steps the policy is shown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPolicy {
    pub base: Vec<f64>,
    /// One row per reasoning step, one column per action dimension.
    pub weights: Vec<Vec<f64>>,
    #[serde(default)]
    pub context_weight: f64,
    #[serde(default)]
    pub embedding: Embedding,
    /// Per-timestep attenuation of a stale step's influence, in `[0, 1]`.
    #[serde(default = "one")]
    pub staleness_decay: f64,
}

fn one() -> f64 {
    1.0
}

impl SyntheticPolicy {
    pub fn new(base: Vec<f64>, weights: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        let p = Self {
            base,
            weights,
            context_weight: 0.0,
            embedding: Embedding::Unit,
            staleness_decay: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Weight `w` on every dimension of step `j`, zero elsewhere.
    pub fn single_step(num_steps: usize, dim: usize, j: usize, w: f64) -> Self {
        let mut weights = vec![vec![0.0; dim]; num_steps];
        weights[j] = vec![w; dim];
        Self::new(vec![0.0; dim], weights).expect("well-formed")
    }

    /// Weights growing linearly with step index: later steps matter more.
    pub fn increasing(num_steps: usize, dim: usize) -> Self {
        let weights = (0..num_steps).map(|j| vec![(j + 1) as f64; dim]).collect();
        Self::new(vec![0.0; dim], weights).expect("well-formed")
    }

    pub fn with_embedding(mut self, embedding: Embedding) -> Self {
        self.embedding = embedding;
        self
    }

    pub fn with_staleness_decay(mut self, decay: f64) -> Self {
        self.staleness_decay = decay;
        self
    }

    pub fn with_context_weight(mut self, w: f64) -> Self {
        self.context_weight = w;
        self
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn num_steps(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |m: &str| Err(MetricsError::InvalidPolicy(m.into()));
        if self.base.is_empty() {
            return bad("base action is empty");
        }
        if self.weights.iter().any(|w| w.len() != self.base.len()) {
            return bad("weight rows must match the action dimension");
        }
        let finite = self.base.iter().chain(self.weights.iter().flatten()).all(|x| x.is_finite());
        if !finite || !self.context_weight.is_finite() {
            return bad("weights must be finite");
        }
        if !(0.0..=1.0).contains(&self.staleness_decay) {
            return bad("staleness_decay must lie in [0, 1]");
        }
        Ok(())
    }

    /// Action given the context and the first `steps.len()` reasoning steps.
    pub fn act(&self, ctx: &Context, steps: &[TokenSeq], staleness: &[u64]) -> Result<ActionVector, MetricsError> {
        if steps.len() > self.num_steps() {
            return Err(MetricsError::ShapeMismatch {
                expected: self.num_steps(),
                actual: steps.len(),
            });
        }
        let dim = self.dim();
        let mut out = self.base.clone();
        if self.context_weight != 0.0 {
            for (o, e) in out.iter_mut().zip(self.embedding.embed(&ctx.encoded, dim)) {
                *o += self.context_weight * e;
            }
        }
        for (j, tokens) in steps.iter().enumerate() {
            let s = staleness.get(j).copied().unwrap_or(0);
            let scale = self.staleness_decay.powi(s.min(i32::MAX as u64) as i32);
            for ((o, w), e) in out.iter_mut().zip(&self.weights[j]).zip(self.embedding.embed(tokens, dim)) {
                *o += w * e * scale;
            }
        }
        Ok(ActionVector::new(out)?)
    }
}

/// `‖A_i − A‖₁` with every step fresh.
pub fn action_faithfulness(
    policy: &SyntheticPolicy,
    ctx: &Context,
    trace: &ReasoningTrace,
    i: usize,
) -> Result<f64, MetricsError> {
    action_faithfulness_with_staleness(policy, ctx, trace, &[], i)
}

/// `‖A_i − A‖₁`, where `A_i` sees only the first `i` reasoning steps.
/// Steps missing from `staleness` count as fresh.
pub fn action_faithfulness_with_staleness(
    policy: &SyntheticPolicy,
    ctx: &Context,
    trace: &ReasoningTrace,
    staleness: &[u64],
    i: usize,
) -> Result<f64, MetricsError> {
    let steps: Vec<TokenSeq> = trace.reasoning().iter().map(|s| s.tokens.clone()).collect();
    let n = steps.len();
    if n != policy.num_steps() {
        return Err(MetricsError::ShapeMismatch {
            expected: policy.num_steps(),
            actual: n,
        });
    }
    if i > n {
        return Err(MetricsError::PrefixOutOfRange { i, n });
    }
    let full = policy.act(ctx, &steps, staleness)?;
    let partial = policy.act(ctx, &steps[..i], staleness)?;
    Ok(partial.l1_distance(&full))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaithfulnessSample {
    pub context: Context,
    pub trace: ReasoningTrace,
    pub staleness: Vec<u64>,
}

/// Mean and population standard deviation of `AF_i` for `i = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaithfulnessReport {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub samples: usize,
}

#[derive(Serialize)]
struct CurveRow<'a> {
    mode: &'a str,
    prefix_len: usize,
    af_mean: f64,
    af_std: f64,
    samples: usize,
}

/// One CSV with a row per (mode, prefix length).
pub fn write_faithfulness_csv<'a, W: io::Write>(
    curves: impl IntoIterator<Item = (&'a str, &'a FaithfulnessReport)>,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for (mode, r) in curves {
        for (i, (&m, &s)) in r.mean.iter().zip(&r.std).enumerate() {
            w.serialize(CurveRow {
                mode,
                prefix_len: i,
                af_mean: m,
                af_std: s,
                samples: r.samples,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Samples `sample_steps` timesteps uniformly without replacement (all of
/// them when fewer exist) and aggregates the AF curve.
pub fn faithfulness_curve(
    policy: &SyntheticPolicy,
    pool: &[FaithfulnessSample],
    sample_steps: usize,
    seed: u64,
) -> Result<FaithfulnessReport, MetricsError> {
    if pool.is_empty() || sample_steps == 0 {
        return Err(MetricsError::Empty);
    }
    let chosen: Vec<usize> = if sample_steps >= pool.len() {
        (0..pool.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = index::sample(&mut rng, pool.len(), sample_steps).into_vec();
        idx.sort_unstable();
        idx
    };
    let n = policy.num_steps();
    let mut stats = vec![RunningStats::default(); n + 1];
    for &k in &chosen {
        let s = &pool[k];
        for (i, st) in stats.iter_mut().enumerate() {
            st.push(action_faithfulness_with_staleness(policy, &s.context, &s.trace, &s.staleness, i)?);
        }
    }
    Ok(FaithfulnessReport {
        mean: stats.iter().map(|s| s.mean()).collect(),
        std: stats.iter().map(|s| s.population_std()).collect(),
        samples: chosen.len(),
    })
}
