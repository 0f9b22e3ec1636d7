use std::collections::HashSet;

use proptest::prelude::*;

use super::*;
use crate::backend::{mix_seed, BufferedGenerator, Capabilities, ConstantBackend, SyntheticBackend, SyntheticProfile};
use crate::batcher::LatencyModel;
use crate::trace::{StepSpec, TraceStep};

/// Every step has a fixed length; content depends on timestep, step and
/// prefix. Listed (timestep, step) pairs fail after one token.
struct FixedBackend {
    lengths: Vec<usize>,
    fail: HashSet<(u64, usize)>,
}

impl FixedBackend {
    fn new(lengths: &[usize]) -> Self {
        Self {
            lengths: lengths.to_vec(),
            fail: HashSet::new(),
        }
    }

    fn failing(mut self, timestep: u64, step: usize) -> Self {
        self.fail.insert((timestep, step));
        self
    }
}

struct Failing;

impl StepGenerator for Failing {
    fn is_finished(&mut self) -> Result<bool, BackendError> {
        Ok(false)
    }

    fn next_token(&mut self) -> Result<u32, BackendError> {
        Err(BackendError::Injected("injected".into()))
    }

    fn truncated(&self) -> bool {
        false
    }
}

impl GenerationBackend for FixedBackend {
    fn name(&self) -> &str {
        "fixed"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            deterministic: true,
            supports_prefix_conditioning: true,
        }
    }

    fn encode(&self, instruction: &str, observation: &[u8]) -> Result<Context, BackendError> {
        Ok(Context::hashed(instruction, observation))
    }

    fn begin_step(&self, input: &StepInput<'_>) -> Result<Box<dyn StepGenerator>, BackendError> {
        if self.fail.contains(&(input.timestep, input.step_index)) {
            return Ok(Box::new(Failing));
        }
        let base = mix_seed(&[input.timestep, input.step_index as u64, input.prefix.digest()]);
        let tokens = (0..self.lengths[input.step_index] as u64)
            .map(|k| (mix_seed(&[base, k]) % 1000) as u32)
            .collect();
        Ok(Box::new(BufferedGenerator::new(tokens, input.step.max_tokens)))
    }
}

fn schema_for(lengths: &[usize]) -> StepSchema {
    let (action, reasoning) = lengths.split_last().unwrap();
    let levels = [Level::High, Level::Low];
    StepSchema::new(
        reasoning
            .iter()
            .enumerate()
            .map(|(i, &l)| StepSpec::new(format!("r{i}"), levels[i % 2], l.max(1)))
            .collect(),
        StepSpec::new("action", Level::Low, *action),
    )
    .unwrap()
}

fn model(c_iter: f64, c_slot: f64, c_encode: f64, c_decode: f64) -> LatencyModel {
    LatencyModel::new(c_iter, c_slot, c_encode, c_decode).unwrap()
}

fn ctx(t: u64) -> Context {
    Context::hashed("pick up the cup", &t.to_le_bytes())
}

fn run(config: SchedulerConfig, backend: &dyn GenerationBackend, schema: &StepSchema, steps: u64) -> Vec<StepResult> {
    let mut s = Scheduler::new(config, backend, schema.clone()).unwrap();
    (0..steps).map(|t| s.step(&ctx(t)).unwrap()).collect()
}

fn contents(trace: &ReasoningTrace) -> Vec<&TraceStep> {
    trace.steps.iter().collect()
}

#[test]
fn sequential_latency_closed_form() {
    let lengths = [5, 7];
    let backend = FixedBackend::new(&lengths);
    let schema = schema_for(&lengths);
    let cfg = SchedulerConfig::new(Mode::Sequential).with_latency(model(10.0, 1.0, 3.0, 2.0));
    let r = run(cfg, &backend, &schema, 2);
    for step in &r {
        assert_eq!(step.latency_ms, 12.0 * 11.0 + 3.0 + 2.0);
        assert_eq!(step.staleness, vec![0, 0]);
        assert_eq!(step.tokens_generated, 12);
        assert_eq!(step.action.dim(), 7);
    }
}

#[test]
fn sync_makespan_matches_continuous_batch() {
    let lengths = [3, 6, 8, 9];
    let backend = FixedBackend::new(&lengths);
    let schema = schema_for(&lengths);
    let cfg = SchedulerConfig::new(Mode::ParallelSync)
        .with_slots(4)
        .with_latency(model(1.0, 0.0, 0.0, 0.0));
    let r = run(cfg, &backend, &schema, 3);
    assert_eq!(r[0].latency_ms, 26.0, "first timestep is a sequential warm-up");
    assert_eq!(r[1].latency_ms, 9.0);
    assert_eq!(r[2].latency_ms, 9.0);
}

#[test]
fn sequential_over_sync_ratio() {
    let lengths = [120, 100, 80, 50, 7];
    let backend = FixedBackend::new(&lengths);
    let schema = schema_for(&lengths);
    let m = model(1.0, 0.0, 0.0, 0.0);
    let seq = run(SchedulerConfig::new(Mode::Sequential).with_latency(m), &backend, &schema, 2);
    let sync = run(SchedulerConfig::new(Mode::ParallelSync).with_latency(m), &backend, &schema, 2);
    assert_eq!(seq[1].latency_ms, 357.0);
    assert_eq!(sync[1].latency_ms, 120.0);
    assert!((seq[1].latency_ms / sync[1].latency_ms - 357.0 / 120.0).abs() < 1e-12);
}

#[test]
fn async_latency_covers_only_the_action() {
    let m = model(10.0, 1.0, 3.0, 2.0);
    let mut latencies = Vec::new();
    for lengths in [[20, 30, 7], [40, 50, 7]] {
        let backend = FixedBackend::new(&lengths);
        let schema = schema_for(&lengths);
        // long enough that no reasoning request finishes during an action
        let r = run(SchedulerConfig::new(Mode::ParallelAsync).with_latency(m), &backend, &schema, 3);
        assert_eq!(r[0].latency_ms, lengths.iter().sum::<usize>() as f64 * 11.0 + 5.0);
        for step in &r[1..] {
            // three requests share the engine for all seven action iterations
            assert_eq!(step.latency_ms, 7.0 * (10.0 + 3.0) + 5.0);
        }
        latencies.push(r[1..].iter().map(|s| s.latency_ms).collect::<Vec<_>>());
    }
    assert_eq!(latencies[0], latencies[1]);
}

#[test]
fn async_without_change_keeps_content_and_ages_steps() {
    let schema = StepSchema::ecot_default();
    let mut profile = SyntheticProfile::ecot_default(7);
    for s in &mut profile.steps {
        if s.name != "Action" {
            s.change_probability = 0.0;
        }
    }
    let backend = SyntheticBackend::new(&schema, &profile).unwrap();
    let r = run(SchedulerConfig::new(Mode::ParallelAsync), &backend, &schema, 30);
    let n = schema.num_reasoning();
    for pair in r.windows(2) {
        assert_eq!(pair[0].trace.reasoning(), pair[1].trace.reasoning());
        for i in 0..n {
            let (a, b) = (pair[0].staleness[i], pair[1].staleness[i]);
            assert!(b == a + 1 || b == 0, "step {i}: {a} -> {b}");
        }
    }
    assert!(r.iter().any(|s| s.staleness.iter().any(|&x| x > 0)));
}

#[test]
fn k_step_with_k_one_is_sequential() {
    let schema = StepSchema::ecot_default();
    let backend = SyntheticBackend::new(&schema, &SyntheticProfile::ecot_default(3)).unwrap();
    let seq = run(SchedulerConfig::new(Mode::Sequential), &backend, &schema, 12);
    let k1 = run(SchedulerConfig::k_step(1), &backend, &schema, 12);
    for (a, b) in seq.iter().zip(&k1) {
        assert_eq!((&a.trace, a.latency_ms, &a.staleness), (&b.trace, b.latency_ms, &b.staleness));
    }
}

#[test]
fn k_step_regenerates_high_level_every_k() {
    let schema = StepSchema::ecot_default();
    let backend = SyntheticBackend::new(&schema, &SyntheticProfile::ecot_default(3)).unwrap();
    let r = run(SchedulerConfig::k_step(5), &backend, &schema, 10);
    let high: Vec<usize> = (0..schema.num_reasoning())
        .filter(|&i| schema.steps()[i].level == Level::High)
        .collect();
    let regenerations = r.iter().filter(|s| high.iter().all(|&i| s.staleness[i] == 0)).count();
    assert_eq!(regenerations, 2);
    assert_eq!(r[9].cache_version, 2 * high.len() as u64);
    for (t, s) in r.iter().enumerate() {
        for &i in &high {
            assert_eq!(s.staleness[i], t as u64 % 5);
        }
    }
}

#[test]
fn two_track_without_background_is_k_step_never() {
    let schema = StepSchema::ecot_default();
    let backend = SyntheticBackend::new(&schema, &SyntheticProfile::ecot_default(11)).unwrap();
    let mut off = SchedulerConfig::new(Mode::TwoTrack);
    off.high_level_track = false;
    let a = run(off, &backend, &schema, 15);
    let b = run(SchedulerConfig::k_step(K_NEVER), &backend, &schema, 15);
    assert_eq!(a, b);
}

#[test]
fn two_track_version_moves_only_with_the_background_track() {
    let schema = StepSchema::ecot_default();
    let backend = SyntheticBackend::new(&schema, &SyntheticProfile::ecot_default(11)).unwrap();
    let mut off = SchedulerConfig::new(Mode::TwoTrack);
    off.high_level_track = false;
    let warm = run(off.clone(), &backend, &schema, 1)[0].cache_version;
    assert!(run(off, &backend, &schema, 20).iter().all(|s| s.cache_version == warm));

    let mut s = Scheduler::new(SchedulerConfig::new(Mode::TwoTrack), &backend, schema.clone()).unwrap();
    let mut last = 0;
    let mut writes = 0;
    for t in 0..40 {
        let r = s.step(&ctx(t)).unwrap();
        assert!(r.cache_version >= last);
        if t > 0 && r.cache_version > last {
            writes += 1;
        }
        last = r.cache_version;
    }
    assert!(writes > 0);
}

#[test]
fn content_ignoring_backend_gives_identical_traces_in_every_mode() {
    let schema = StepSchema::ecot_default();
    let backend = ConstantBackend::new(5);
    let reference = run(SchedulerConfig::new(Mode::Sequential), &backend, &schema, 12);
    for mode in Mode::ALL {
        let r = run(SchedulerConfig::new(mode), &backend, &schema, 12);
        for (a, b) in reference.iter().zip(&r) {
            assert_eq!(contents(&a.trace), contents(&b.trace), "{mode}");
            assert_eq!(a.action, b.action);
        }
    }
}

#[test]
fn single_timestep_is_the_sequential_warm_up() {
    let schema = StepSchema::ecot_default();
    let backend = SyntheticBackend::new(&schema, &SyntheticProfile::ecot_default(2)).unwrap();
    let seq = run(SchedulerConfig::new(Mode::Sequential), &backend, &schema, 1);
    for mode in Mode::ALL {
        let r = run(SchedulerConfig::new(mode), &backend, &schema, 1);
        assert_eq!(r[0].trace, seq[0].trace, "{mode}");
        assert_eq!(r[0].latency_ms, seq[0].latency_ms);
    }
}

#[test]
fn episodes_are_reproducible() {
    let schema = StepSchema::ecot_default();
    let backend = SyntheticBackend::new(&schema, &SyntheticProfile::ecot_default(9)).unwrap();
    let input = EpisodeInput::new("open the drawer", 9, 25);
    for mode in Mode::ALL {
        let logs: Vec<Vec<u8>> = (0..2)
            .map(|_| {
                let mut s = Scheduler::new(SchedulerConfig::new(mode), &backend, schema.clone()).unwrap();
                let mut out = Vec::new();
                run_episode(&mut s, &input).write_trace_log(&mut out).unwrap();
                out
            })
            .collect();
        assert_eq!(logs[0], logs[1], "{mode}");
        assert_eq!(logs[0].iter().filter(|&&b| b == b'\n').count(), 25);
    }
}

#[test]
fn default_profile_ordering() {
    let schema = StepSchema::ecot_default();
    let backend = SyntheticBackend::new(&schema, &SyntheticProfile::ecot_default(21)).unwrap();
    let mean = |cfg: SchedulerConfig| {
        let r = run(cfg, &backend, &schema, 100);
        r.iter().map(|s| s.latency_ms).sum::<f64>() / r.len() as f64
    };
    let seq = mean(SchedulerConfig::new(Mode::Sequential));
    let sync = mean(SchedulerConfig::new(Mode::ParallelSync));
    let asy = mean(SchedulerConfig::new(Mode::ParallelAsync));
    let k5 = mean(SchedulerConfig::k_step(5));
    let two = mean(SchedulerConfig::new(Mode::TwoTrack));
    assert!(asy < sync && sync < two && sync < k5 && two < seq && k5 < seq, "{asy} {sync} {two} {k5} {seq}");
}

#[test]
fn sequential_failure_reuses_previous_content() {
    let lengths = [4, 5, 7];
    let schema = schema_for(&lengths);
    let backend = FixedBackend::new(&lengths).failing(1, 1);
    let r = run(SchedulerConfig::new(Mode::Sequential), &backend, &schema, 3);
    assert_eq!(r[1].failures, 1);
    assert_eq!(r[1].trace.steps[1], r[0].trace.steps[1]);
    assert_eq!(r[1].staleness, vec![0, 1, 0]);
    assert_eq!(r[2].staleness, vec![0, 0, 0]);
}

#[test]
fn abort_policy_stops_with_partial_trace() {
    let lengths = [4, 5, 7];
    let schema = schema_for(&lengths);
    let backend = FixedBackend::new(&lengths).failing(2, 1);
    for mode in [Mode::Sequential, Mode::ParallelSync] {
        let cfg = SchedulerConfig::new(mode).with_failure_policy(FailurePolicy::AbortEpisode);
        let mut s = Scheduler::new(cfg, &backend, schema.clone()).unwrap();
        let report = run_episode(&mut s, &EpisodeInput::new("x", 0, 5));
        assert_eq!(report.results.len(), 2);
        let abort = report.aborted.unwrap();
        assert_eq!(abort.timestep, 2);
        assert_eq!(abort.step.as_deref(), Some("r1"));
        let partial = abort.partial.unwrap();
        assert_eq!(partial.timestep, 2);
        assert_eq!(partial.steps[0].tokens.len(), 4, "{mode}");
    }
}

#[test]
fn first_timestep_failure_aborts_even_when_reusing() {
    let lengths = [4, 7];
    let schema = schema_for(&lengths);
    let backend = FixedBackend::new(&lengths).failing(0, 0);
    let mut s = Scheduler::new(SchedulerConfig::new(Mode::Sequential), &backend, schema).unwrap();
    assert!(matches!(s.step(&ctx(0)), Err(SchedError::StepFailed { .. })));
}

#[test]
fn async_background_failure_keeps_stale_step() {
    let lengths = [4, 5, 7];
    let schema = schema_for(&lengths);
    let backend = FixedBackend::new(&lengths).failing(1, 0);
    let r = run(SchedulerConfig::new(Mode::ParallelAsync), &backend, &schema, 4);
    assert_eq!(r[1].failures, 1);
    assert_eq!(r[1].trace.steps[0], r[0].trace.steps[0]);
    assert_eq!(r[1].staleness[0], 1);
    assert_eq!(r[1].staleness[1], 0);
    // reissued at the next timestep
    assert_eq!(r[2].staleness[0], 0);
}

#[test]
fn sync_failure_substitutes_previous_step() {
    let lengths = [4, 5, 7];
    let schema = schema_for(&lengths);
    let backend = FixedBackend::new(&lengths).failing(2, 0);
    let r = run(SchedulerConfig::new(Mode::ParallelSync), &backend, &schema, 3);
    assert_eq!(r[2].failures, 1);
    assert_eq!(r[2].trace.steps[0], r[1].trace.steps[0]);
    assert_eq!(r[2].staleness, vec![1, 0, 0]);
}

#[test]
fn episode_summaries() {
    let schema = StepSchema::ecot_default();
    let backend = SyntheticBackend::new(&schema, &SyntheticProfile::ecot_default(4)).unwrap();
    let mut s = Scheduler::new(SchedulerConfig::new(Mode::ParallelAsync), &backend, schema.clone()).unwrap();
    let report = run_episode(&mut s, &EpisodeInput::new("x", 4, 20));
    assert_eq!(report.label, "parallel_async");
    assert_eq!(report.rows().len(), 20);
    let hist: u64 = report.staleness_histogram().values().sum();
    assert_eq!(hist, 20 * schema.num_reasoning() as u64);
    let mut csv = Vec::new();
    report.write_timesteps_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("timestep,latency_ms,tokens_generated,failures,cache_version,max_staleness\n"));
    assert_eq!(text.lines().count(), 21);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn latency_dominance_per_timestep(seed in any::<u64>(), c_iter in 0.5f64..30.0) {
        let schema = StepSchema::ecot_default();
        let mut profile = SyntheticProfile::ecot_default(seed);
        for s in &mut profile.steps {
            s.change_probability = 1.0;
        }
        let backend = SyntheticBackend::new(&schema, &profile).unwrap();
        let m = model(c_iter, 0.0, 100.0, 10.0);
        let seq = run(SchedulerConfig::new(Mode::Sequential).with_latency(m), &backend, &schema, 15);
        let sync = run(SchedulerConfig::new(Mode::ParallelSync).with_latency(m), &backend, &schema, 15);
        let asy = run(SchedulerConfig::new(Mode::ParallelAsync).with_latency(m), &backend, &schema, 15);
        for t in 0..15 {
            prop_assert!(asy[t].latency_ms <= sync[t].latency_ms);
            prop_assert!(sync[t].latency_ms <= seq[t].latency_ms);
        }
    }

    #[test]
    fn async_staleness_is_bounded(seed in any::<u64>()) {
        let schema = StepSchema::ecot_default();
        let backend = SyntheticBackend::new(&schema, &SyntheticProfile::ecot_default(seed)).unwrap();
        let action_len = schema.action_step().max_tokens as u64;
        let r = run(SchedulerConfig::new(Mode::ParallelAsync), &backend, &schema, 60);
        for s in &r {
            for (i, spec) in schema.reasoning_steps().iter().enumerate() {
                let bound = (spec.max_tokens as u64).div_ceil(action_len) + 1;
                prop_assert!(s.staleness[i] <= bound, "step {} staleness {} > {}", i, s.staleness[i], bound);
            }
        }
    }
}
