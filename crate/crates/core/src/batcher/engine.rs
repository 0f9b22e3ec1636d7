use std::collections::BTreeMap;

use super::{BatchSchedule, LatencyModel, Priority, RequestId, Slot};

/// Work item that occupies a slot and emits one token per iteration.
pub trait SlotJob {
    type Error;

    /// True once no tokens remain. Checked on admission and after every
    /// emitted token, so a job never holds its slot for an idle iteration.
    fn finished(&mut self) -> Result<bool, Self::Error>;

    fn advance(&mut self) -> Result<(), Self::Error>;
}

pub struct Completed<J: SlotJob> {
    pub id: RequestId,
    pub job: J,
    pub outcome: Result<(), J::Error>,
    /// Iteration in which the last token was produced (or the admission
    /// iteration for jobs that had nothing to emit).
    pub iteration: u64,
}

pub struct Tick<J: SlotJob> {
    pub occupied: usize,
    pub completed: Vec<Completed<J>>,
}

/// Continuous-batching engine loop over `B` slots on a simulated clock.
///
/// Queued jobs are admitted at the start of an iteration into free slots in
/// slot order; ties are broken by (priority, arrival iteration, id). Every
/// occupied slot then advances by one token and the clock is charged
/// `c_iter + c_slot × occupied`.
pub struct SlotEngine<J: SlotJob> {
    slots: Vec<Option<(RequestId, J)>>,
    queue: BTreeMap<(Priority, u64, RequestId), J>,
    iteration: u64,
    clock_ms: f64,
    tokens: u64,
    model: LatencyModel,
    record: Option<Vec<Vec<Slot>>>,
}

impl<J: SlotJob> SlotEngine<J> {
    pub fn new(slots: usize, model: LatencyModel) -> Self {
        assert!(slots >= 1, "an engine needs at least one slot");
        Self {
            slots: (0..slots).map(|_| None).collect(),
            queue: BTreeMap::new(),
            iteration: 0,
            clock_ms: 0.0,
            tokens: 0,
            model,
            record: None,
        }
    }

    /// Keep a per-iteration slot occupancy record.
    pub fn recording(mut self) -> Self {
        self.record = Some(Vec::new());
        self
    }

    pub fn submit(&mut self, id: RequestId, priority: Priority, job: J) {
        self.submit_at(id, priority, self.iteration, job);
    }

    pub fn submit_at(&mut self, id: RequestId, priority: Priority, arrival: u64, job: J) {
        self.queue.insert((priority, arrival, id), job);
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn clock_ms(&self) -> f64 {
        self.clock_ms
    }

    /// Tokens emitted so far.
    pub fn tokens(&self) -> u64 {
        self.tokens
    }

    pub fn in_flight(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.in_flight() == 0
    }

    pub fn running(&self) -> impl Iterator<Item = (RequestId, &J)> {
        self.slots.iter().flatten().map(|(id, j)| (*id, j))
    }

    pub fn queued_jobs(&self) -> impl Iterator<Item = (RequestId, &J)> {
        self.queue.iter().map(|((_, _, id), j)| (*id, j))
    }

    pub fn into_schedule(self) -> Option<BatchSchedule> {
        let slots = self.slots.len();
        self.record.map(|rows| BatchSchedule::new(slots, rows))
    }

    fn pop_eligible(&mut self) -> Option<(RequestId, J)> {
        let key = *self.queue.keys().find(|(_, arrival, _)| *arrival <= self.iteration)?;
        self.queue.remove(&key).map(|job| (key.2, job))
    }

    fn admit(&mut self, completed: &mut Vec<Completed<J>>) {
        for slot in 0..self.slots.len() {
            while self.slots[slot].is_none() {
                let Some((id, mut job)) = self.pop_eligible() else {
                    return;
                };
                match job.finished() {
                    Ok(false) => self.slots[slot] = Some((id, job)),
                    Ok(true) => completed.push(Completed {
                        id,
                        job,
                        outcome: Ok(()),
                        iteration: self.iteration,
                    }),
                    Err(e) => completed.push(Completed {
                        id,
                        job,
                        outcome: Err(e),
                        iteration: self.iteration,
                    }),
                }
            }
        }
    }

    /// Runs one iteration. When nothing is runnable but future arrivals are
    /// queued, the iteration passes idle at no cost.
    pub fn tick(&mut self) -> Tick<J> {
        let mut completed = Vec::new();
        self.admit(&mut completed);
        let occupied = self.in_flight();
        if occupied == 0 {
            if !self.queue.is_empty() {
                if let Some(rows) = self.record.as_mut() {
                    rows.push(vec![Slot::Empty; self.slots.len()]);
                }
                self.iteration += 1;
            }
            return Tick { occupied, completed };
        }

        let mut row = vec![Slot::Empty; self.slots.len()];
        for (slot, entry) in self.slots.iter_mut().enumerate() {
            let Some((id, job)) = entry.as_mut() else { continue };
            row[slot] = Slot::Request(*id);
            let outcome = match job.advance() {
                Ok(()) => {
                    self.tokens += 1;
                    job.finished().map(|done| done.then_some(()))
                }
                Err(e) => Err(e),
            };
            match outcome {
                Ok(None) => {}
                Ok(Some(())) => {
                    let (id, job) = entry.take().expect("slot is occupied");
                    completed.push(Completed {
                        id,
                        job,
                        outcome: Ok(()),
                        iteration: self.iteration,
                    });
                }
                Err(e) => {
                    let (id, job) = entry.take().expect("slot is occupied");
                    completed.push(Completed {
                        id,
                        job,
                        outcome: Err(e),
                        iteration: self.iteration,
                    });
                }
            }
        }
        self.clock_ms += self.model.iteration_cost(occupied);
        if let Some(rows) = self.record.as_mut() {
            rows.push(row);
        }
        self.iteration += 1;
        Tick { occupied, completed }
    }
}
