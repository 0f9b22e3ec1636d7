//! Structured reasoning traces.
//!
//! A trace holds one token sequence per schema step for a single control
//! timestep. The last schema step is always the action step; every step
//! before it is a reasoning step. Traces are written to disk as one JSON
//! object per line:
//!
//! ```text
//! {"timestep":3,"steps":[{"name":"Task","level":"high","tokens":[..]},..],"action":[..],"wall_ms":681.2}
//! ```

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default action dimensionality (x, y, z, roll, pitch, yaw, gripper).
pub const DEFAULT_ACTION_DIM: usize = 7;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("invalid step schema: {0}")]
    InvalidSchema(String),
    #[error("incompatible traces: {0}")]
    SchemaMismatch(String),
    #[error("invalid action vector: {0}")]
    InvalidAction(String),
    #[error("malformed trace record at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    High,
    Low,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::High => f.write_str("high"),
            Level::Low => f.write_str("low"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSpec {
    pub name: String,
    pub level: Level,
    pub max_tokens: usize,
}

impl StepSpec {
    pub fn new(name: impl Into<String>, level: Level, max_tokens: usize) -> Self {
        Self {
            name: name.into(),
            level,
            max_tokens,
        }
    }
}

/// Ordered reasoning steps followed by the terminal action step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaConfig", into = "SchemaConfig")]
pub struct StepSchema {
    steps: Vec<StepSpec>,
}

#[derive(Serialize, Deserialize)]
struct SchemaConfig {
    reasoning: Vec<StepSpec>,
    action: StepSpec,
}

impl TryFrom<SchemaConfig> for StepSchema {
    type Error = TraceError;

    fn try_from(cfg: SchemaConfig) -> Result<Self, Self::Error> {
        StepSchema::new(cfg.reasoning, cfg.action)
    }
}

impl From<StepSchema> for SchemaConfig {
    fn from(mut schema: StepSchema) -> Self {
        let action = schema.steps.pop().expect("schema always holds the action step");
        SchemaConfig {
            reasoning: schema.steps,
            action,
        }
    }
}

impl StepSchema {
    pub fn new(reasoning: Vec<StepSpec>, action: StepSpec) -> Result<Self, TraceError> {
        let mut steps = reasoning;
        steps.push(action);
        let mut seen = HashSet::new();
        for step in &steps {
            if step.name.is_empty() {
                return Err(TraceError::InvalidSchema("empty step name".into()));
            }
            if !seen.insert(step.name.as_str()) {
                return Err(TraceError::InvalidSchema(format!(
                    "duplicate step name {:?}",
                    step.name
                )));
            }
            if step.max_tokens == 0 {
                return Err(TraceError::InvalidSchema(format!(
                    "step {:?} has a zero token budget",
                    step.name
                )));
            }
        }
        Ok(Self { steps })
    }

    /// Task, Plan, Subtask (high level), Move, Gripper Position,
    /// Visible Objects (low level), then a 7-token Action.
    pub fn ecot_default() -> Self {
        Self::new(
            vec![
                StepSpec::new("Task", Level::High, 64),
                StepSpec::new("Plan", Level::High, 192),
                StepSpec::new("Subtask", Level::High, 64),
                StepSpec::new("Move", Level::Low, 48),
                StepSpec::new("Gripper Position", Level::Low, 32),
                StepSpec::new("Visible Objects", Level::Low, 256),
            ],
            StepSpec::new("Action", Level::Low, DEFAULT_ACTION_DIM),
        )
        .expect("default schema is valid")
    }

    /// All steps, action last.
    pub fn steps(&self) -> &[StepSpec] {
        &self.steps
    }

    pub fn reasoning_steps(&self) -> &[StepSpec] {
        &self.steps[..self.steps.len() - 1]
    }

    pub fn action_step(&self) -> &StepSpec {
        self.steps.last().expect("schema always holds the action step")
    }

    /// Number of reasoning steps, N.
    pub fn num_reasoning(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn action_index(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.steps.iter().position(|s| s.name == name)
    }

    /// A trace with every step empty, stamped with `timestep`.
    pub fn empty_trace(&self, timestep: u64) -> ReasoningTrace {
        ReasoningTrace {
            timestep,
            steps: self
                .steps
                .iter()
                .map(|s| TraceStep {
                    name: s.name.clone(),
                    level: s.level,
                    tokens: TokenSeq::default(),
                })
                .collect(),
            action: None,
        }
    }
}

/// Opaque token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<u32>);

impl TokenSeq {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self(tokens)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, token: u32) {
        self.0.push(token);
    }

    pub fn extend_from(&mut self, other: &TokenSeq) {
        self.0.extend_from_slice(&other.0);
    }

    /// Stable 64-bit digest of the token ids.
    pub fn digest(&self) -> u64 {
        let mut hasher = Sha256::new();
        for t in &self.0 {
            hasher.update(t.to_le_bytes());
        }
        let out = hasher.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("digest is 32 bytes"))
    }
}

impl From<Vec<u32>> for TokenSeq {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVector(Vec<f64>);

impl ActionVector {
    pub fn new(components: Vec<f64>) -> Result<Self, TraceError> {
        if components.is_empty() {
            return Err(TraceError::InvalidAction("zero-length action".into()));
        }
        if let Some(bad) = components.iter().find(|c| !c.is_finite()) {
            return Err(TraceError::InvalidAction(format!("non-finite component {bad}")));
        }
        Ok(Self(components))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn l1_distance(&self, other: &ActionVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Maps action tokens onto normalized components in [-1, 1] using 256
/// uniform bins; the k-th token fills the k-th component. Missing tokens
/// decode to 0 and surplus tokens are ignored.
pub fn decode_action(tokens: &TokenSeq, dim: usize) -> ActionVector {
    let components = (0..dim)
        .map(|k| match tokens.0.get(k) {
            Some(&t) => -1.0 + f64::from(t % 256) * 2.0 / 255.0,
            None => 0.0,
        })
        .collect();
    ActionVector(components)
}

/// Encoded instruction and observation for one timestep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Context {
    pub instruction: String,
    pub observation: Vec<u8>,
    pub encoded: TokenSeq,
}

impl Context {
    /// Hash-derived encoding. Empty inputs give an empty encoding.
    pub fn hashed(instruction: &str, observation: &[u8]) -> Self {
        let encoded = if instruction.is_empty() && observation.is_empty() {
            TokenSeq::default()
        } else {
            let mut hasher = Sha256::new();
            hasher.update((instruction.len() as u64).to_le_bytes());
            hasher.update(instruction.as_bytes());
            hasher.update(observation);
            let out = hasher.finalize();
            TokenSeq(
                out[..16]
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                    .collect(),
            )
        };
        Self {
            instruction: instruction.to_owned(),
            observation: observation.to_vec(),
            encoded,
        }
    }

    /// 64-bit seed folded from the encoding; 0 for the empty context.
    pub fn seed(&self) -> u64 {
        match self.encoded.as_slice() {
            [] => 0,
            [only] => u64::from(*only),
            [a, b, ..] => u64::from(*a) | (u64::from(*b) << 32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub name: String,
    pub level: Level,
    pub tokens: TokenSeq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningTrace {
    pub timestep: u64,
    /// One entry per schema step, action step last.
    pub steps: Vec<TraceStep>,
    pub action: Option<ActionVector>,
}

impl ReasoningTrace {
    pub fn reasoning(&self) -> &[TraceStep] {
        &self.steps[..self.steps.len().saturating_sub(1)]
    }

    pub fn action_tokens(&self) -> Option<&TokenSeq> {
        self.steps.last().map(|s| &s.tokens)
    }

    pub fn tokens(&self, index: usize) -> &TokenSeq {
        &self.steps[index].tokens
    }

    pub fn total_tokens(&self) -> usize {
        self.steps.iter().map(|s| s.tokens.len()).sum()
    }

    /// Checks step names, levels, order and budgets against `schema`.
    pub fn conforms_to(&self, schema: &StepSchema) -> Result<(), TraceError> {
        if self.steps.len() != schema.len() {
            return Err(TraceError::SchemaMismatch(format!(
                "trace has {} steps, schema has {}",
                self.steps.len(),
                schema.len()
            )));
        }
        for (step, spec) in self.steps.iter().zip(schema.steps()) {
            if step.name != spec.name || step.level != spec.level {
                return Err(TraceError::SchemaMismatch(format!(
                    "step {:?}/{} does not match schema step {:?}/{}",
                    step.name, step.level, spec.name, spec.level
                )));
            }
            if step.tokens.len() > spec.max_tokens {
                return Err(TraceError::SchemaMismatch(format!(
                    "step {:?} holds {} tokens over a budget of {}",
                    step.name,
                    step.tokens.len(),
                    spec.max_tokens
                )));
            }
        }
        Ok(())
    }

    fn same_shape(&self, other: &ReasoningTrace) -> bool {
        self.steps.len() == other.steps.len()
            && self
                .steps
                .iter()
                .zip(&other.steps)
                .all(|(a, b)| a.name == b.name && a.level == b.level)
    }
}

/// How much of a step's content counts as changed between timesteps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioGranularity {
    /// Normalized token-level Levenshtein distance.
    #[default]
    Token,
    /// 0 when identical, 1 otherwise.
    Step,
}

pub fn levenshtein(a: &[u32], b: &[u32]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Fraction of content changed from `prev` to `next`, in [0, 1].
pub fn update_ratio(prev: &TokenSeq, next: &TokenSeq) -> f64 {
    update_ratio_with(prev, next, RatioGranularity::Token)
}

pub fn update_ratio_with(prev: &TokenSeq, next: &TokenSeq, granularity: RatioGranularity) -> f64 {
    let longest = prev.len().max(next.len());
    if longest == 0 {
        return 0.0;
    }
    match granularity {
        RatioGranularity::Token => levenshtein(prev.as_slice(), next.as_slice()) as f64 / longest as f64,
        RatioGranularity::Step => {
            if prev == next {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Per reasoning step update ratios in schema order; the action step is
/// excluded.
pub fn trace_update_ratio(
    prev: &ReasoningTrace,
    next: &ReasoningTrace,
) -> Result<Vec<(String, f64)>, TraceError> {
    trace_update_ratio_with(prev, next, RatioGranularity::Token)
}

pub fn trace_update_ratio_with(
    prev: &ReasoningTrace,
    next: &ReasoningTrace,
    granularity: RatioGranularity,
) -> Result<Vec<(String, f64)>, TraceError> {
    if !prev.same_shape(next) {
        return Err(TraceError::SchemaMismatch(format!(
            "timesteps {} and {} use different step layouts",
            prev.timestep, next.timestep
        )));
    }
    Ok(prev
        .reasoning()
        .iter()
        .zip(next.reasoning())
        .map(|(a, b)| (a.name.clone(), update_ratio_with(&a.tokens, &b.tokens, granularity)))
        .collect())
}

/// One line of a trace log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub trace: ReasoningTrace,
    pub wall_ms: f64,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    timestep: u64,
    steps: &'a [TraceStep],
    action: &'a [f64],
    wall_ms: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    timestep: u64,
    steps: Vec<TraceStep>,
    action: Vec<f64>,
    wall_ms: f64,
}

/// Serializes one record as a single JSON line (without the newline).
/// An absent action is written as an empty array.
pub fn serialize_trace(record: &TraceRecord) -> Vec<u8> {
    let out = RecordOut {
        timestep: record.trace.timestep,
        steps: &record.trace.steps,
        action: record.trace.action.as_ref().map_or(&[], |a| a.components()),
        wall_ms: record.wall_ms,
    };
    serde_json::to_vec(&out).expect("trace records always serialize")
}

pub fn deserialize_trace(bytes: &[u8]) -> Result<TraceRecord, TraceError> {
    let rec: RecordIn = serde_json::from_slice(bytes).map_err(|e| TraceError::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let action = if rec.action.is_empty() {
        None
    } else {
        Some(ActionVector::new(rec.action)?)
    };
    Ok(TraceRecord {
        trace: ReasoningTrace {
            timestep: rec.timestep,
            steps: rec.steps,
            action,
        },
        wall_ms: rec.wall_ms,
    })
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line <= 1 {
        return column.saturating_sub(1).min(bytes.len());
    }
    let mut seen = 1;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            seen += 1;
            if seen == line {
                return (i + column).min(bytes.len());
            }
        }
    }
    bytes.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    // Textbook recursive edit distance, memoized on (i, j).
    fn edit_distance_oracle(a: &[u32], b: &[u32]) -> usize {
        fn go(a: &[u32], b: &[u32], memo: &mut HashMap<(usize, usize), usize>) -> usize {
            if a.is_empty() {
                return b.len();
            }
            if b.is_empty() {
                return a.len();
            }
            let key = (a.len(), b.len());
            if let Some(&d) = memo.get(&key) {
                return d;
            }
            let d = if a[0] == b[0] {
                go(&a[1..], &b[1..], memo)
            } else {
                1 + go(&a[1..], b, memo)
                    .min(go(a, &b[1..], memo))
                    .min(go(&a[1..], &b[1..], memo))
            };
            memo.insert(key, d);
            d
        }
        go(a, b, &mut HashMap::new())
    }

    fn seq(v: &[u32]) -> TokenSeq {
        TokenSeq(v.to_vec())
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(update_ratio(&seq(&[1, 2, 3]), &seq(&[1, 2, 3])), 0.0);
        assert_eq!(update_ratio(&seq(&[1, 2, 3, 4]), &seq(&[])), 1.0);
        assert_eq!(update_ratio(&seq(&[]), &seq(&[])), 0.0);

        let prev: Vec<u32> = (1..=10).collect();
        let mut next = prev.clone();
        next[4] = 99;
        let oracle = edit_distance_oracle(&prev, &next) as f64 / 10.0;
        assert_eq!(oracle, 0.1);
        assert_eq!(update_ratio(&seq(&prev), &seq(&next)), oracle);
    }

    #[test]
    fn step_granularity() {
        let a = seq(&[1, 2, 3]);
        let b = seq(&[1, 2, 4]);
        assert_eq!(update_ratio_with(&a, &b, RatioGranularity::Step), 1.0);
        assert_eq!(update_ratio_with(&a, &a, RatioGranularity::Step), 0.0);
    }

    proptest! {
        #[test]
        fn levenshtein_matches_oracle(
            a in prop::collection::vec(0u32..4, 0..=12),
            b in prop::collection::vec(0u32..4, 0..=12),
        ) {
            prop_assert_eq!(levenshtein(&a, &b), edit_distance_oracle(&a, &b));
        }

        #[test]
        fn ratio_is_symmetric_and_bounded(
            a in prop::collection::vec(0u32..5, 0..20),
            b in prop::collection::vec(0u32..5, 0..20),
        ) {
            let (a, b) = (seq(&a), seq(&b));
            let r = update_ratio(&a, &b);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(r, update_ratio(&b, &a));
            prop_assert_eq!(update_ratio(&a, &a), 0.0);
        }

        #[test]
        fn ratio_triangle_on_equal_lengths(
            n in 1usize..10,
            raw in prop::collection::vec(0u32..3, 30),
        ) {
            let x = seq(&raw[..n]);
            let y = seq(&raw[10..10 + n]);
            let z = seq(&raw[20..20 + n]);
            let eps = 1e-12;
            prop_assert!(update_ratio(&x, &z) <= update_ratio(&x, &y) + update_ratio(&y, &z) + eps);
        }
    }

    #[test]
    fn schema_rejects_duplicates_and_zero_budgets() {
        let dup = StepSchema::new(
            vec![StepSpec::new("A", Level::High, 4)],
            StepSpec::new("A", Level::Low, 7),
        );
        assert!(matches!(dup, Err(TraceError::InvalidSchema(_))));
        let zero = StepSchema::new(vec![StepSpec::new("A", Level::High, 0)], StepSpec::new("Act", Level::Low, 7));
        assert!(matches!(zero, Err(TraceError::InvalidSchema(_))));
        let action_only = StepSchema::new(vec![], StepSpec::new("Act", Level::Low, 7)).unwrap();
        assert_eq!(action_only.num_reasoning(), 0);
    }

    #[test]
    fn default_schema_layout() {
        let s = StepSchema::ecot_default();
        assert_eq!(s.num_reasoning(), 6);
        assert_eq!(s.action_step().name, "Action");
        assert_eq!(s.action_step().max_tokens, DEFAULT_ACTION_DIM);
        assert_eq!(s.index_of("Plan"), Some(1));
    }

    #[test]
    fn trace_ratio_per_step() {
        let schema = StepSchema::ecot_default();
        let mut prev = schema.empty_trace(0);
        for (i, step) in prev.steps.iter_mut().enumerate() {
            step.tokens = seq(&[i as u32; 5]);
        }
        let same = trace_update_ratio(&prev, &prev).unwrap();
        assert_eq!(same.len(), 6);
        assert!(same.iter().all(|(_, r)| *r == 0.0));

        let mut next = prev.clone();
        next.timestep = 1;
        next.steps[1].tokens = seq(&[100, 101, 102, 103, 104, 105]);
        next.steps[6].tokens = seq(&[9; 7]);
        let ratios = trace_update_ratio(&prev, &next).unwrap();
        for (name, r) in ratios {
            assert_eq!(r, if name == "Plan" { 1.0 } else { 0.0 }, "{name}");
        }

        let mut other = prev.clone();
        other.steps.pop();
        assert!(matches!(trace_update_ratio(&prev, &other), Err(TraceError::SchemaMismatch(_))));
    }

    #[test]
    fn action_decode_bins() {
        let a = decode_action(&seq(&[0, 255, 256 + 128]), 4);
        assert_eq!(a.components()[0], -1.0);
        assert_eq!(a.components()[1], 1.0);
        assert!((a.components()[2] - (-1.0 + 256.0 / 255.0)).abs() < 1e-12);
        assert_eq!(a.components()[3], 0.0);
        assert!(ActionVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn context_encoding() {
        let empty = Context::hashed("", &[]);
        assert!(empty.encoded.is_empty());
        assert_eq!(empty.seed(), 0);
        assert_eq!(Context::hashed("pick", b"obs"), Context::hashed("pick", b"obs"));
        assert_ne!(Context::hashed("pick", b"obs").seed(), Context::hashed("pick", b"obt").seed());
    }

    fn sample_record(schema: &StepSchema, fill: impl Fn(usize, usize) -> u32) -> TraceRecord {
        let mut trace = schema.empty_trace(42);
        for (i, (step, spec)) in trace.steps.iter_mut().zip(schema.steps()).enumerate() {
            step.tokens = TokenSeq((0..spec.max_tokens).map(|k| fill(i, k)).collect());
        }
        trace.action = Some(decode_action(trace.action_tokens().unwrap(), DEFAULT_ACTION_DIM));
        TraceRecord { trace, wall_ms: 686.25 }
    }

    #[test]
    fn full_budget_trace_reserializes_byte_identically() {
        let schema = StepSchema::ecot_default();
        let rec = sample_record(&schema, |i, k| (i as u32) * 7919 + (k as u32) * 104_729);
        let first = serialize_trace(&rec);
        let back = deserialize_trace(&first).unwrap();
        assert_eq!(back, rec);
        assert_eq!(serialize_trace(&back), first);
    }

    #[test]
    fn empty_steps_round_trip() {
        let schema = StepSchema::ecot_default();
        let rec = TraceRecord {
            trace: schema.empty_trace(0),
            wall_ms: 0.0,
        };
        assert_eq!(deserialize_trace(&serialize_trace(&rec)).unwrap(), rec);
    }

    #[test]
    fn field_order_is_fixed() {
        let schema = StepSchema::new(vec![StepSpec::new("Plan", Level::High, 4)], StepSpec::new("Action", Level::Low, 2))
            .unwrap();
        let mut trace = schema.empty_trace(3);
        trace.steps[0].tokens = seq(&[5, 6]);
        trace.steps[1].tokens = seq(&[0, 255]);
        trace.action = Some(decode_action(&trace.steps[1].tokens, 2));
        let line = String::from_utf8(serialize_trace(&TraceRecord { trace, wall_ms: 12.5 })).unwrap();
        assert_eq!(
            line,
            r#"{"timestep":3,"steps":[{"name":"Plan","level":"high","tokens":[5,6]},{"name":"Action","level":"low","tokens":[0,255]}],"action":[-1.0,1.0],"wall_ms":12.5}"#
        );
    }

    #[test]
    fn parse_error_reports_offset() {
        let err = deserialize_trace(br#"{"timestep":1,"steps":[}"#).unwrap_err();
        match err {
            TraceError::Parse { offset, .. } => assert!(offset > 0 && offset <= 24, "{offset}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn round_trip_random_traces(
            timestep in 0u64..1_000_000,
            lens in prop::collection::vec(0usize..16, 7),
            seed in any::<u32>(),
            wall in 0.0f64..1e6,
            with_action in any::<bool>(),
        ) {
            let schema = StepSchema::ecot_default();
            let mut trace = schema.empty_trace(timestep);
            for (i, step) in trace.steps.iter_mut().enumerate() {
                let n = lens[i].min(schema.steps()[i].max_tokens);
                step.tokens = TokenSeq((0..n).map(|k| seed.wrapping_mul(2_654_435_761).wrapping_add((i * 31 + k) as u32)).collect());
            }
            if with_action {
                trace.action = Some(decode_action(trace.action_tokens().unwrap(), DEFAULT_ACTION_DIM));
            }
            let rec = TraceRecord { trace, wall_ms: wall };
            let back = deserialize_trace(&serialize_trace(&rec)).unwrap();
            prop_assert_eq!(back, rec);
        }
    }
}
