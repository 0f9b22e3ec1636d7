//! Shared cache stress driver.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;

use ecot_sched::schedulers::{CachedTrace, SharedCache};
use ecot_sched::trace::TokenSeq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct StressOutcome {
    pub writes: usize,
    pub snapshots: usize,
    /// Snapshots that match no recorded version.
    pub torn: usize,
}

/// Writers log the version each step write produced; replaying that log in
/// version order reconstructs every state the cache passed through, and
/// each reader snapshot must equal the state at its own version.
pub fn cache_stress(steps: usize, writers: u64, readers: usize, writes_each: usize, reads_each: usize) -> StressOutcome {
    let cache = Arc::new(SharedCache::new(steps));
    let write_handles: Vec<_> = (0..writers)
        .map(|w| {
            let cache = Arc::clone(&cache);
            thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(w);
                (0..writes_each)
                    .map(|k| {
                        let step = rng.random_range(0..steps);
                        let len = rng.random_range(1..40);
                        let tag = (w * 1_000_000 + k as u64) as u32;
                        let tokens = TokenSeq::new(vec![tag; len]);
                        let version = cache.write_step(step, tokens.clone(), k as u64);
                        (version, (step, tokens, k as u64))
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let read_handles: Vec<_> = (0..readers)
        .map(|_| {
            let cache = Arc::clone(&cache);
            thread::spawn(move || (0..reads_each).map(|_| cache.snapshot()).collect::<Vec<_>>())
        })
        .collect();

    let mut log = BTreeMap::new();
    for h in write_handles {
        log.extend(h.join().expect("writer panicked"));
    }
    let snapshots: Vec<CachedTrace> = read_handles
        .into_iter()
        .flat_map(|h| h.join().expect("reader panicked"))
        .collect();

    let mut state = CachedTrace::new(steps);
    let mut states = vec![state.clone()];
    for (&version, (step, tokens, t)) in &log {
        assert_eq!(version, state.version + 1, "versions must be dense");
        state.steps[*step].tokens = tokens.clone();
        state.steps[*step].last_updated = Some(*t);
        state.version = version;
        states.push(state.clone());
    }
    assert_eq!(cache.snapshot(), state);

    let torn = snapshots
        .iter()
        .filter(|s| states.get(s.version as usize) != Some(*s))
        .count();
    StressOutcome {
        writes: log.len(),
        snapshots: snapshots.len(),
        torn,
    }
}
