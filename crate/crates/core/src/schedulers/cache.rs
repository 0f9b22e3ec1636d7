use std::sync::RwLock;

use crate::trace::TokenSeq;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CachedStep {
    pub tokens: TokenSeq,
    /// Timestep of the last write; `None` until first written.
    pub last_updated: Option<u64>,
}

/// Versioned per-step reasoning cache contents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CachedTrace {
    pub steps: Vec<CachedStep>,
    /// Incremented by every step write.
    pub version: u64,
}

impl CachedTrace {
    pub fn new(num_steps: usize) -> Self {
        Self {
            steps: vec![CachedStep::default(); num_steps],
            version: 0,
        }
    }

    /// Concatenation of steps `0..end`; never-written steps contribute
    /// nothing.
    pub fn prefix(&self, end: usize) -> TokenSeq {
        let mut out = TokenSeq::default();
        for s in &self.steps[..end] {
            out.extend_from(&s.tokens);
        }
        out
    }

    pub fn staleness(&self, index: usize, now: u64) -> u64 {
        now.saturating_sub(self.steps[index].last_updated.unwrap_or(0))
    }

    pub fn is_populated(&self, index: usize) -> bool {
        self.steps[index].last_updated.is_some()
    }
}

/// Shared cache with exclusive step writes and whole-cache snapshot reads.
///
/// A snapshot is taken under the read lock, so it always equals the cache
/// state at exactly one version.
#[derive(Debug, Default)]
pub struct SharedCache {
    inner: RwLock<CachedTrace>,
}

impl SharedCache {
    pub fn new(num_steps: usize) -> Self {
        Self {
            inner: RwLock::new(CachedTrace::new(num_steps)),
        }
    }

    pub fn snapshot(&self) -> CachedTrace {
        self.inner.read().expect("cache lock poisoned").clone()
    }

    pub fn version(&self) -> u64 {
        self.inner.read().expect("cache lock poisoned").version
    }

    /// Replaces one step and returns the resulting version.
    pub fn write_step(&self, index: usize, tokens: TokenSeq, timestep: u64) -> u64 {
        let mut guard = self.inner.write().expect("cache lock poisoned");
        let step = &mut guard.steps[index];
        step.tokens = tokens;
        step.last_updated = Some(timestep);
        guard.version += 1;
        guard.version
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn versions_and_staleness() {
        let cache = SharedCache::new(3);
        assert_eq!(cache.version(), 0);
        assert_eq!(cache.write_step(1, TokenSeq::new(vec![1, 2]), 4), 1);
        assert_eq!(cache.write_step(0, TokenSeq::new(vec![9]), 5), 2);
        let snap = cache.snapshot();
        assert_eq!(snap.version, 2);
        assert_eq!(snap.prefix(2).as_slice(), &[9, 1, 2]);
        assert_eq!(snap.staleness(1, 7), 3);
        assert!(!snap.is_populated(2));
    }
}
