//! Static and continuous batching on an iteration-level simulated clock.
//!
//! One engine iteration advances every occupied slot by one token. A
//! [`BatchSchedule`] records, for each iteration, what each of the `B`
//! slots held: a request, padding, or nothing.

mod engine;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{Completed, SlotEngine, SlotJob, Tick};

pub type RequestId = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BatchError {
    #[error("batch capacity must be at least 1")]
    ZeroSlots,
    #[error("{requests} requests exceed a static batch of {slots} slots")]
    TooManyRequests { requests: usize, slots: usize },
    #[error("pad_to {pad_to} is shorter than the longest request ({longest})")]
    PadTooShort { pad_to: usize, longest: usize },
    #[error("request id {0} appears twice")]
    DuplicateId(RequestId),
    #[error("invalid latency model: {0}")]
    InvalidModel(String),
}

/// Admission class. Action requests are admitted ahead of queued reasoning
/// requests but never preempt running ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    Action,
    Reasoning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRequest {
    pub id: RequestId,
    pub step_index: usize,
    pub prefix_len: usize,
    pub target_len: usize,
    pub arrival_iteration: u64,
    pub priority: Priority,
}

impl GenerationRequest {
    pub fn new(id: RequestId, target_len: usize) -> Self {
        Self {
            id,
            step_index: 0,
            prefix_len: 0,
            target_len,
            arrival_iteration: 0,
            priority: Priority::Reasoning,
        }
    }

    pub fn with_priority(mut self, priority: Priority) -> Self {
        self.priority = priority;
        self
    }

    pub fn arriving_at(mut self, iteration: u64) -> Self {
        self.arrival_iteration = iteration;
        self
    }

    /// Requests with ids 0.. and the given lengths, all arriving at 0.
    pub fn from_lengths(lengths: &[usize]) -> Vec<Self> {
        lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| Self {
                step_index: i,
                ..Self::new(i as RequestId, n)
            })
            .collect()
    }

    fn admission_key(&self) -> (Priority, u64, RequestId) {
        (self.priority, self.arrival_iteration, self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Request(RequestId),
    Pad,
    Empty,
}

impl Slot {
    pub fn is_occupied(self) -> bool {
        !matches!(self, Slot::Empty)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSchedule {
    slots: usize,
    iterations: Vec<Vec<Slot>>,
}

impl BatchSchedule {
    pub fn new(slots: usize, iterations: Vec<Vec<Slot>>) -> Self {
        debug_assert!(iterations.iter().all(|row| row.len() == slots));
        Self { slots, iterations }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn iterations(&self) -> &[Vec<Slot>] {
        &self.iterations
    }

    pub fn occupied_at(&self, iteration: usize) -> usize {
        self.iterations[iteration].iter().filter(|s| s.is_occupied()).count()
    }

    /// Slot-iterations holding a request or padding.
    pub fn occupied_slot_iterations(&self) -> usize {
        self.iterations.iter().flatten().filter(|s| s.is_occupied()).count()
    }

    pub fn pad_slot_iterations(&self) -> usize {
        self.iterations.iter().flatten().filter(|s| **s == Slot::Pad).count()
    }

    /// Slot-iterations that produced a token.
    pub fn token_slot_iterations(&self) -> usize {
        self.iterations
            .iter()
            .flatten()
            .filter(|s| matches!(s, Slot::Request(_)))
            .count()
    }

    /// Iterations from the first admission to the last completion.
    pub fn makespan(&self) -> usize {
        let busy = |row: &Vec<Slot>| row.iter().any(|s| s.is_occupied());
        match (
            self.iterations.iter().position(busy),
            self.iterations.iter().rposition(busy),
        ) {
            (Some(first), Some(last)) => last - first + 1,
            _ => 0,
        }
    }

    /// Per request: (slot, first iteration, iterations held).
    pub fn spans(&self) -> Vec<(RequestId, usize, usize, usize)> {
        let mut spans: Vec<(RequestId, usize, usize, usize)> = Vec::new();
        for (it, row) in self.iterations.iter().enumerate() {
            for (slot, s) in row.iter().enumerate() {
                if let Slot::Request(id) = *s {
                    match spans.iter_mut().find(|e| e.0 == id) {
                        Some(e) => e.3 += 1,
                        None => spans.push((id, slot, it, 1)),
                    }
                }
            }
        }
        spans
    }

    /// Checks that every request holds exactly one slot for `target_len`
    /// contiguous iterations starting no earlier than its arrival.
    pub fn validate(&self, requests: &[GenerationRequest]) -> Result<(), String> {
        let spans = self.spans();
        for r in requests.iter().filter(|r| r.target_len > 0) {
            let &(_, slot, start, held) = spans
                .iter()
                .find(|s| s.0 == r.id)
                .ok_or_else(|| format!("request {} never scheduled", r.id))?;
            if held != r.target_len {
                return Err(format!("request {} held {held} iterations, wanted {}", r.id, r.target_len));
            }
            if (start as u64) < r.arrival_iteration {
                return Err(format!("request {} started before arrival", r.id));
            }
            for it in start..start + held {
                if self.iterations[it][slot] != Slot::Request(r.id) {
                    return Err(format!("request {} is not contiguous in slot {slot}", r.id));
                }
            }
        }
        if spans.len() != requests.iter().filter(|r| r.target_len > 0).count() {
            return Err("schedule contains unknown requests".into());
        }
        Ok(())
    }

    /// CSV with columns `iteration,slot,occupant`; occupant is a request id,
    /// `PAD` or `EMPTY`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "slot", "occupant"])?;
        for (it, row) in self.iterations.iter().enumerate() {
            for (slot, s) in row.iter().enumerate() {
                let occupant = match s {
                    Slot::Request(id) => id.to_string(),
                    Slot::Pad => "PAD".into(),
                    Slot::Empty => "EMPTY".into(),
                };
                w.write_record([it.to_string(), slot.to_string(), occupant])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulated-clock cost parameters, all in milliseconds.
///
/// The defaults are calibrated so that, on the default reasoning profile, a
/// fully sequential pass, a synchronized parallel pass and an asynchronous
/// action-only pass cost roughly 5.0 s, 2.2 s and 0.7 s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    /// Fixed cost of one engine iteration.
    pub c_iter: f64,
    /// Cost per occupied slot per iteration.
    pub c_slot: f64,
    /// Per-timestep encoding charge.
    pub c_encode: f64,
    /// Per-timestep action decoding charge.
    pub c_decode: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            c_iter: 12.0,
            c_slot: 0.36,
            c_encode: 560.0,
            c_decode: 24.0,
        }
    }
}

impl LatencyModel {
    pub fn new(c_iter: f64, c_slot: f64, c_encode: f64, c_decode: f64) -> Result<Self, BatchError> {
        let m = Self {
            c_iter,
            c_slot,
            c_encode,
            c_decode,
        };
        m.validate()?;
        Ok(m)
    }

    /// Per-token costs only; no encode or decode charges.
    pub fn tokens_only(c_iter: f64, c_slot: f64) -> Self {
        Self {
            c_iter,
            c_slot,
            c_encode: 0.0,
            c_decode: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), BatchError> {
        for (name, v) in [
            ("c_iter", self.c_iter),
            ("c_slot", self.c_slot),
            ("c_encode", self.c_encode),
            ("c_decode", self.c_decode),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(BatchError::InvalidModel(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    /// Cost of one iteration with `occupied` busy slots. An iteration with
    /// nothing to run is free.
    pub fn iteration_cost(&self, occupied: usize) -> f64 {
        if occupied == 0 {
            0.0
        } else {
            self.c_iter + self.c_slot * occupied as f64
        }
    }

    pub fn overhead(&self) -> f64 {
        self.c_encode + self.c_decode
    }
}

fn check_unique(requests: &[GenerationRequest]) -> Result<(), BatchError> {
    let mut ids: Vec<RequestId> = requests.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    match ids.windows(2).find(|w| w[0] == w[1]) {
        Some(w) => Err(BatchError::DuplicateId(w[0])),
        None => Ok(()),
    }
}

/// Pads every request to `pad_to` (default: the longest request) and holds
/// the batch until that many iterations have run. The batch starts once the
/// last member has arrived.
pub fn static_batch(
    requests: &[GenerationRequest],
    slots: usize,
    pad_to: Option<usize>,
) -> Result<BatchSchedule, BatchError> {
    if slots == 0 {
        return Err(BatchError::ZeroSlots);
    }
    if requests.len() > slots {
        return Err(BatchError::TooManyRequests {
            requests: requests.len(),
            slots,
        });
    }
    check_unique(requests)?;
    let longest = requests.iter().map(|r| r.target_len).max().unwrap_or(0);
    let pad_to = match pad_to {
        Some(p) if p < longest => return Err(BatchError::PadTooShort { pad_to: p, longest }),
        Some(p) => p,
        None => longest,
    };
    let start = requests.iter().map(|r| r.arrival_iteration).max().unwrap_or(0) as usize;
    let mut order: Vec<&GenerationRequest> = requests.iter().collect();
    order.sort_by_key(|r| r.admission_key());

    let mut iterations = vec![vec![Slot::Empty; slots]; start + pad_to];
    for (slot, r) in order.iter().enumerate() {
        for k in 0..pad_to {
            iterations[start + k][slot] = if k < r.target_len { Slot::Request(r.id) } else { Slot::Pad };
        }
    }
    Ok(BatchSchedule::new(slots, iterations))
}

struct FixedLength(usize);

impl SlotJob for FixedLength {
    type Error = std::convert::Infallible;

    fn finished(&mut self) -> Result<bool, Self::Error> {
        Ok(self.0 == 0)
    }

    fn advance(&mut self) -> Result<(), Self::Error> {
        self.0 -= 1;
        Ok(())
    }
}

/// Work-conserving schedule: a slot freed at iteration k admits the next
/// queued request at k + 1. Admission order is action before reasoning, then
/// arrival iteration, then request id.
pub fn continuous_batch(requests: &[GenerationRequest], slots: usize) -> Result<BatchSchedule, BatchError> {
    if slots == 0 {
        return Err(BatchError::ZeroSlots);
    }
    check_unique(requests)?;
    let mut engine = SlotEngine::new(slots, LatencyModel::default()).recording();
    for r in requests {
        engine.submit_at(r.id, r.priority, r.arrival_iteration, FixedLength(r.target_len));
    }
    while !engine.is_idle() {
        engine.tick();
    }
    Ok(engine.into_schedule().expect("recording engine"))
}

/// Σ over iterations of `c_iter + c_slot × occupied`; padding counts as
/// occupied, empty slots do not, and fully idle iterations are free.
pub fn schedule_cost(schedule: &BatchSchedule, model: &LatencyModel) -> f64 {
    (0..schedule.iterations.len())
        .map(|it| model.iteration_cost(schedule.occupied_at(it)))
        .sum()
}

/// Fraction of occupied slot-iterations spent on padding.
pub fn padding_waste(schedule: &BatchSchedule) -> f64 {
    let occupied = schedule.occupied_slot_iterations();
    if occupied == 0 {
        0.0
    } else {
        schedule.pad_slot_iterations() as f64 / occupied as f64
    }
}
