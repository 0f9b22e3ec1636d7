//! Inference strategies over a shared continuous-batching engine.
//!
//! A [`Scheduler`] owns one [`SlotEngine`] for the whole episode, so work
//! started in one timestep (asynchronous reasoning, the two-track
//! background track) keeps occupying slots in later ones. The engine only
//! advances while the current timestep is waiting for its foreground
//! requests.

mod cache;
mod config;
mod episode;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::backend::{BackendError, GenerationBackend, StepGenerator, StepInput};
use crate::batcher::{Completed, Priority, RequestId, SlotEngine, SlotJob};
use crate::trace::{decode_action, ActionVector, Context, Level, ReasoningTrace, StepSchema, TokenSeq};

pub use cache::{CachedStep, CachedTrace, SharedCache};
pub use config::{Clock, FailurePolicy, Mode, SchedulerConfig, K_NEVER};
pub use episode::{run_episode, Abort, EpisodeInput, EpisodeReport, TimestepRow};

#[derive(Debug, Error)]
pub enum SchedError {
    #[error("invalid scheduler config: {0}")]
    Config(String),
    #[error("encoding failed: {0}")]
    Encode(#[source] BackendError),
    #[error("timestep {timestep}: step {step:?} failed: {source}")]
    StepFailed {
        timestep: u64,
        step: String,
        #[source]
        source: BackendError,
        /// Whatever had been produced when the failure hit.
        partial: Box<ReasoningTrace>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub trace: ReasoningTrace,
    pub action: ActionVector,
    pub latency_ms: f64,
    /// Per schema step: current timestep minus the timestep its content was
    /// generated in.
    pub staleness: Vec<u64>,
    /// Tokens emitted by the engine during this timestep, background work
    /// included.
    pub tokens_generated: u64,
    pub failures: u32,
    pub cache_version: u64,
}

struct StepJob {
    step_index: usize,
    background: bool,
    generator: Box<dyn StepGenerator>,
    tokens: TokenSeq,
}

impl SlotJob for StepJob {
    type Error = BackendError;

    fn finished(&mut self) -> Result<bool, BackendError> {
        self.generator.is_finished()
    }

    fn advance(&mut self) -> Result<(), BackendError> {
        let t = self.generator.next_token()?;
        self.tokens.push(t);
        Ok(())
    }
}

struct Previous {
    trace: ReasoningTrace,
    staleness: Vec<u64>,
}

pub struct Scheduler<'b> {
    config: SchedulerConfig,
    backend: &'b dyn GenerationBackend,
    schema: StepSchema,
    engine: SlotEngine<StepJob>,
    cache: Arc<SharedCache>,
    next_id: RequestId,
    timestep: u64,
    warmed: bool,
    prev: Option<Previous>,
    finished: HashMap<RequestId, Result<TokenSeq, BackendError>>,
    background: Vec<Option<RequestId>>,
    track_cursor: usize,
    ctx: Option<Context>,
    failures: u32,
    background_failures: u64,
}

impl<'b> Scheduler<'b> {
    pub fn new(config: SchedulerConfig, backend: &'b dyn GenerationBackend, schema: StepSchema) -> Result<Self, SchedError> {
        config.validate().map_err(SchedError::Config)?;
        let n = schema.len();
        Ok(Self {
            engine: SlotEngine::new(config.slots, config.latency),
            cache: Arc::new(SharedCache::new(n)),
            config,
            backend,
            schema,
            next_id: 0,
            timestep: 0,
            warmed: false,
            prev: None,
            finished: HashMap::new(),
            background: vec![None; n],
            track_cursor: 0,
            ctx: None,
            failures: 0,
            background_failures: 0,
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn schema(&self) -> &StepSchema {
        &self.schema
    }

    pub fn cache(&self) -> &Arc<SharedCache> {
        &self.cache
    }

    /// The timestep the next call will run.
    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    pub fn engine_clock_ms(&self) -> f64 {
        self.engine.clock_ms()
    }

    pub fn background_failures(&self) -> u64 {
        self.background_failures
    }

    /// Reasoning steps still generating in the background.
    pub fn background_in_flight(&self) -> usize {
        self.background.iter().flatten().count()
    }

    /// Encodes the observation and runs one timestep in the configured
    /// mode. Under [`Clock::Wall`] the reported latency is the measured
    /// wall time of both.
    pub fn step_observed(&mut self, instruction: &str, observation: &[u8]) -> Result<StepResult, SchedError> {
        let started = Instant::now();
        let ctx = self
            .backend
            .encode(instruction, observation)
            .map_err(SchedError::Encode)?;
        let mut result = self.step(&ctx)?;
        if self.config.clock == Clock::Wall {
            result.latency_ms = started.elapsed().as_secs_f64() * 1e3;
        }
        Ok(result)
    }

    /// Runs one timestep in the configured mode.
    pub fn step(&mut self, ctx: &Context) -> Result<StepResult, SchedError> {
        match self.config.mode {
            Mode::Sequential => self.run_sequential(ctx),
            Mode::ParallelSync => match self.prev.take() {
                Some(prev) => {
                    let out = self.parallel_sync(ctx, &prev);
                    if out.is_err() {
                        self.prev = Some(prev);
                    }
                    out
                }
                None => self.run_sequential(ctx),
            },
            Mode::ParallelAsync => self.run_parallel_async(ctx),
            Mode::KStep => self.run_k_step(ctx, self.config.k),
            Mode::TwoTrack => self.run_two_track(ctx),
        }
    }

    /// Generates every step strictly in schema order within one timestep.
    pub fn run_sequential(&mut self, ctx: &Context) -> Result<StepResult, SchedError> {
        let start = self.begin_timestep(ctx);
        let n = self.schema.len();
        let mut visible = vec![TokenSeq::default(); n];
        let mut staleness = vec![0; n];
        let targets: Vec<usize> = (0..n).collect();
        self.run_chain(ctx, &mut visible, &mut staleness, &targets)?;
        Ok(self.finish_timestep(start, visible, staleness))
    }

    /// Generates all steps concurrently, step `i` conditioned on `prev`'s
    /// steps before it, and waits for all of them.
    pub fn run_parallel_sync(&mut self, ctx: &Context, prev: &ReasoningTrace) -> Result<StepResult, SchedError> {
        let staleness = match &self.prev {
            Some(p) if p.trace == *prev => p.staleness.clone(),
            _ => vec![0; self.schema.len()],
        };
        self.parallel_sync(
            ctx,
            &Previous {
                trace: prev.clone(),
                staleness,
            },
        )
    }

    fn parallel_sync(&mut self, ctx: &Context, prev: &Previous) -> Result<StepResult, SchedError> {
        let start = self.begin_timestep(ctx);
        let n = self.schema.len();
        let mut issued = Vec::with_capacity(n);
        let mut prefix = TokenSeq::default();
        for i in 0..n {
            let prev_content = prev.trace.tokens(i);
            issued.push(self.issue(ctx, i, &prefix, prev_content, false));
            prefix.extend_from(prev_content);
        }
        let ids: Vec<RequestId> = issued.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let mut done = self.drive_until(&ids).into_iter();

        let mut visible = Vec::with_capacity(n);
        let mut staleness = vec![0; n];
        for (i, issue) in issued.into_iter().enumerate() {
            let outcome = match issue {
                Ok(_) => done.next().expect("one outcome per issued request"),
                Err(e) => Err(e),
            };
            match outcome {
                Ok(tokens) => visible.push(tokens),
                Err(source) => {
                    self.failures += 1;
                    if self.config.failure_policy == FailurePolicy::AbortEpisode {
                        let mut partial = visible.clone();
                        partial.resize(n, TokenSeq::default());
                        return Err(self.step_failed(i, source, partial));
                    }
                    visible.push(prev.trace.tokens(i).clone());
                    staleness[i] = prev.staleness[i] + 1;
                }
            }
        }
        Ok(self.finish_timestep(start, visible, staleness))
    }

    /// Issues the action and any idle reasoning steps against a snapshot of
    /// the cache, and returns once the action is decoded. Reasoning keeps
    /// running in later timesteps and is written into the cache as it
    /// completes. The first call is a blocking sequential warm-up.
    pub fn run_parallel_async(&mut self, ctx: &Context) -> Result<StepResult, SchedError> {
        if !self.warmed {
            return self.warm_up(ctx, |_| true);
        }
        let start = self.begin_timestep(ctx);
        let snap = self.cache.snapshot();
        let action = self.schema.action_index();
        for i in 0..action {
            if self.background[i].is_some() {
                continue;
            }
            match self.issue(ctx, i, &snap.prefix(i), &snap.steps[i].tokens, true) {
                Ok(id) => self.background[i] = Some(id),
                Err(_) => {
                    self.failures += 1;
                    self.background_failures += 1;
                }
            }
        }
        let prev_action = self.prev_tokens(action);
        let (action_tokens, action_stale) = self.foreground(ctx, action, &snap.prefix(action), &prev_action, || {
            snap.steps.iter().map(|s| s.tokens.clone()).collect()
        })?;

        let now = self.cache.snapshot();
        let mut visible: Vec<TokenSeq> = now.steps.iter().map(|s| s.tokens.clone()).collect();
        let mut staleness: Vec<u64> = (0..visible.len()).map(|i| now.staleness(i, self.timestep)).collect();
        visible[action] = action_tokens;
        staleness[action] = action_stale;
        Ok(self.finish_timestep(start, visible, staleness))
    }

    /// Low-level steps and the action run sequentially every timestep;
    /// high-level steps are regenerated (first, in schema order) only when
    /// the timestep is a multiple of `k`, and read from the cache otherwise.
    pub fn run_k_step(&mut self, ctx: &Context, k: u64) -> Result<StepResult, SchedError> {
        let refresh = !self.warmed || self.timestep % k.max(1) == 0;
        if refresh {
            return self.warm_up(ctx, |level| level == Level::High);
        }
        self.low_level_pass(ctx)
    }

    /// Foreground: low-level steps and the action, sequentially, on top of
    /// the cached high-level steps. Background: one high-level step at a
    /// time, cycling through them, written into the cache as each lands.
    pub fn run_two_track(&mut self, ctx: &Context) -> Result<StepResult, SchedError> {
        if !self.warmed {
            return self.warm_up(ctx, |level| level == Level::High);
        }
        self.ctx = Some(ctx.clone());
        if self.background_in_flight() == 0 {
            self.issue_high_level_track();
        }
        self.low_level_pass(ctx)
    }

    fn low_level_pass(&mut self, ctx: &Context) -> Result<StepResult, SchedError> {
        let start = self.begin_timestep(ctx);
        let snap = self.cache.snapshot();
        let n = self.schema.len();
        let mut visible = vec![TokenSeq::default(); n];
        let mut staleness = vec![0; n];
        let mut targets = Vec::new();
        for (i, spec) in self.schema.steps().iter().enumerate() {
            if spec.level == Level::High && i != self.schema.action_index() {
                visible[i] = snap.steps[i].tokens.clone();
            } else {
                targets.push(i);
            }
        }
        self.run_chain(ctx, &mut visible, &mut staleness, &targets)?;

        // report cached steps as of action completion
        let now = self.cache.snapshot();
        for (i, spec) in self.schema.steps().iter().enumerate() {
            if spec.level == Level::High && i != self.schema.action_index() {
                visible[i] = now.steps[i].tokens.clone();
                staleness[i] = now.staleness(i, self.timestep);
            }
        }
        Ok(self.finish_timestep(start, visible, staleness))
    }

    /// Full sequential pass that also writes the steps selected by `cached`
    /// into the cache.
    fn warm_up(&mut self, ctx: &Context, cached: impl Fn(Level) -> bool) -> Result<StepResult, SchedError> {
        let result = self.run_sequential(ctx)?;
        let t = result.trace.timestep;
        for (i, spec) in self.schema.reasoning_steps().iter().enumerate() {
            if cached(spec.level) && result.staleness[i] == 0 {
                self.cache.write_step(i, result.trace.steps[i].tokens.clone(), t);
            }
        }
        self.warmed = true;
        Ok(StepResult {
            cache_version: self.cache.version(),
            ..result
        })
    }

    fn issue_high_level_track(&mut self) {
        if !self.config.high_level_track || self.config.mode != Mode::TwoTrack {
            return;
        }
        let high: Vec<usize> = self
            .schema
            .reasoning_steps()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.level == Level::High)
            .map(|(i, _)| i)
            .collect();
        if high.is_empty() {
            return;
        }
        let Some(ctx) = self.ctx.clone() else { return };
        let i = high[self.track_cursor % high.len()];
        self.track_cursor += 1;
        let snap = self.cache.snapshot();
        match self.issue(&ctx, i, &snap.prefix(i), &TokenSeq::default(), true) {
            Ok(id) => self.background[i] = Some(id),
            Err(_) => {
                self.failures += 1;
                self.background_failures += 1;
            }
        }
    }

    fn prev_tokens(&self, index: usize) -> TokenSeq {
        self.prev
            .as_ref()
            .map(|p| p.trace.tokens(index).clone())
            .unwrap_or_default()
    }

    /// Generates one foreground step and applies the failure policy.
    /// `partial` supplies the step contents reported if the episode aborts.
    fn foreground(
        &mut self,
        ctx: &Context,
        index: usize,
        prefix: &TokenSeq,
        prev_content: &TokenSeq,
        partial: impl FnOnce() -> Vec<TokenSeq>,
    ) -> Result<(TokenSeq, u64), SchedError> {
        let outcome = match self.issue(ctx, index, prefix, prev_content, false) {
            Ok(id) => self.drive_until(&[id]).pop().expect("one outcome"),
            Err(e) => Err(e),
        };
        match outcome {
            Ok(tokens) => Ok((tokens, 0)),
            Err(source) => {
                self.failures += 1;
                match (&self.prev, self.config.failure_policy) {
                    (Some(p), FailurePolicy::ReuseStale) => {
                        Ok((p.trace.tokens(index).clone(), p.staleness[index] + 1))
                    }
                    _ => Err(self.step_failed(index, source, partial())),
                }
            }
        }
    }

    /// Generates `targets` one after another; each is conditioned on the
    /// concatenation of `visible` steps before it.
    fn run_chain(
        &mut self,
        ctx: &Context,
        visible: &mut [TokenSeq],
        staleness: &mut [u64],
        targets: &[usize],
    ) -> Result<(), SchedError> {
        for &i in targets {
            let mut prefix = TokenSeq::default();
            for s in &visible[..i] {
                prefix.extend_from(s);
            }
            let snapshot = visible.to_vec();
            let (tokens, stale) = self.foreground(ctx, i, &prefix, &TokenSeq::default(), || snapshot)?;
            visible[i] = tokens;
            staleness[i] = stale;
        }
        Ok(())
    }

    fn issue(
        &mut self,
        ctx: &Context,
        step_index: usize,
        prefix: &TokenSeq,
        prev_content: &TokenSeq,
        background: bool,
    ) -> Result<RequestId, BackendError> {
        let generator = self.backend.begin_step(&StepInput {
            timestep: self.timestep,
            step_index,
            step: &self.schema.steps()[step_index],
            context: ctx,
            prefix,
            prev_content,
        })?;
        let id = self.next_id;
        self.next_id += 1;
        let priority = if step_index == self.schema.action_index() {
            Priority::Action
        } else {
            Priority::Reasoning
        };
        self.engine.submit(
            id,
            priority,
            StepJob {
                step_index,
                background,
                generator,
                tokens: TokenSeq::default(),
            },
        );
        Ok(id)
    }

    /// Ticks the engine until every request in `ids` has completed,
    /// absorbing background completions along the way.
    fn drive_until(&mut self, ids: &[RequestId]) -> Vec<Result<TokenSeq, BackendError>> {
        while !ids.iter().all(|id| self.finished.contains_key(id)) {
            assert!(
                !self.engine.is_idle(),
                "engine drained while foreground requests were outstanding"
            );
            for c in self.engine.tick().completed {
                self.absorb(c);
            }
        }
        ids.iter()
            .map(|id| self.finished.remove(id).expect("completed"))
            .collect()
    }

    fn absorb(&mut self, c: Completed<StepJob>) {
        let Completed { id, job, outcome, .. } = c;
        if !job.background {
            self.finished.insert(id, outcome.map(|()| job.tokens));
            return;
        }
        let i = job.step_index;
        if self.background[i] == Some(id) {
            self.background[i] = None;
        }
        match outcome {
            Ok(()) => {
                self.cache.write_step(i, job.tokens, self.timestep);
            }
            Err(_) => {
                self.failures += 1;
                self.background_failures += 1;
            }
        }
        if self.config.mode == Mode::TwoTrack {
            self.issue_high_level_track();
        }
    }

    fn step_failed(&self, index: usize, source: BackendError, visible: Vec<TokenSeq>) -> SchedError {
        let mut partial = self.schema.empty_trace(self.timestep);
        for (step, tokens) in partial.steps.iter_mut().zip(visible) {
            step.tokens = tokens;
        }
        SchedError::StepFailed {
            timestep: self.timestep,
            step: self.schema.steps()[index].name.clone(),
            source,
            partial: Box::new(partial),
        }
    }

    fn begin_timestep(&mut self, ctx: &Context) -> TimestepStart {
        self.failures = 0;
        self.ctx = Some(ctx.clone());
        TimestepStart {
            clock_ms: self.engine.clock_ms(),
            tokens: self.engine.tokens(),
        }
    }

    fn finish_timestep(&mut self, start: TimestepStart, visible: Vec<TokenSeq>, staleness: Vec<u64>) -> StepResult {
        let mut trace = self.schema.empty_trace(self.timestep);
        for (step, tokens) in trace.steps.iter_mut().zip(visible) {
            step.tokens = tokens;
        }
        let action = decode_action(trace.action_tokens().expect("schema has an action"), self.config.action_dim);
        trace.action = Some(action.clone());
        let latency_ms = self.engine.clock_ms() - start.clock_ms + self.config.latency.overhead();
        self.prev = Some(Previous {
            trace: trace.clone(),
            staleness: staleness.clone(),
        });
        self.timestep += 1;
        StepResult {
            trace,
            action,
            latency_ms,
            staleness,
            tokens_generated: self.engine.tokens() - start.tokens,
            failures: self.failures,
            cache_version: self.cache.version(),
        }
    }
}

struct TimestepStart {
    clock_ms: f64,
    tokens: u64,
}

#[cfg(test)]
mod tests;
