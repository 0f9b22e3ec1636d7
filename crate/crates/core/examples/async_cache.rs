//! Asynchronous mode: the action reads whatever reasoning the shared cache
//! holds, and background requests refresh it across timesteps.

use ecot_sched::backend::{SyntheticBackend, SyntheticProfile};
use ecot_sched::schedulers::{Mode, Scheduler, SchedulerConfig};
use ecot_sched::trace::{Context, StepSchema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = StepSchema::ecot_default();
    let backend = SyntheticBackend::new(&schema, &SyntheticProfile::ecot_default(2))?;
    let mut scheduler = Scheduler::new(SchedulerConfig::new(Mode::ParallelAsync), &backend, schema.clone())?;
    let names: Vec<_> = schema.reasoning_steps().iter().map(|s| s.name.clone()).collect();
    println!("staleness per step: {}", names.join(" "));
    for t in 0..12u64 {
        let r = scheduler.step(&Context::hashed("open the drawer", &t.to_le_bytes()))?;
        println!(
            "t={t:>2} {:>7.1} ms  version {:>3}  in flight {}  staleness {:?}",
            r.latency_ms,
            r.cache_version,
            scheduler.background_in_flight(),
            &r.staleness[..names.len()]
        );
    }
    Ok(())
}
