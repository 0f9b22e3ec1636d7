//! Scheduling engine and simulated-clock harness for structured
//! chain-of-thought robot policies.
//!
//! - [`trace`]: step schemas, reasoning traces, update ratios, trace logs.
//! - [`backend`]: pluggable token generators (synthetic, replay, constant,
//!   remote HTTP) plus a loopback stub server.
//! - [`batcher`]: static and continuous batching with iteration-level cost
//!   accounting.
//! - [`schedulers`]: sequential, synchronized parallel, asynchronous
//!   parallel, k-step and two-track inference over a shared reasoning cache.
//! - [`metrics`]: update-ratio profiles, latency summaries and action
//!   faithfulness.
//! - [`harness`]: experiment specs, artifact writing and the command
//!   implementations behind the `ecot-sched` binary.

pub mod backend;
pub mod batcher;
pub mod harness;
pub mod metrics;
pub mod schedulers;
pub mod trace;
