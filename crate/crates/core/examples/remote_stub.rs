//! Drives the synchronous scheduler against a local completions stub that
//! rejects the first request with 429.

use ecot_sched::backend::stub::{StubConfig, StubServer};
use ecot_sched::backend::{GenerationBackend, RemoteBackend, RemoteEndpoint};
use ecot_sched::schedulers::{Mode, Scheduler, SchedulerConfig};
use ecot_sched::trace::StepSchema;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stub = StubServer::start(StubConfig {
        text: "move the gripper left".into(),
        forced_statuses: vec![429],
        ..StubConfig::default()
    })?;
    let backend = RemoteBackend::new(RemoteEndpoint::new(stub.base_url()))?;
    let mut scheduler = Scheduler::new(SchedulerConfig::new(Mode::ParallelSync), &backend, StepSchema::ecot_default())?;
    for t in 0..3u64 {
        let r = scheduler.step_observed("wipe the table", &t.to_le_bytes())?;
        println!("t={t} tokens {:>4} failures {}", r.tokens_generated, r.failures);
    }
    println!("stub served {} requests; client {:?}", stub.requests_served(), backend.metrics());
    Ok(())
}
