//! How much each reasoning step changes between consecutive timesteps.

use ecot_sched::backend::{SyntheticBackend, SyntheticProfile};
use ecot_sched::metrics::profile_episodes;
use ecot_sched::schedulers::{run_episode, EpisodeInput, Mode, Scheduler, SchedulerConfig};
use ecot_sched::trace::StepSchema;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = StepSchema::ecot_default();
    let backend = SyntheticBackend::new(&schema, &SyntheticProfile::ecot_default(11))?;
    let mut scheduler = Scheduler::new(SchedulerConfig::new(Mode::ParallelSync), &backend, schema)?;
    let report = run_episode(&mut scheduler, &EpisodeInput::new("stack the blocks", 11, 500));
    let episode = report.results.into_iter().map(|r| r.trace).collect();
    let profile = profile_episodes(&[episode])?;
    println!("{} transitions", profile.transitions);
    println!("{:<18} {:>7} {:>7} {:>8}", "step", "ratio", "std", "length");
    for s in &profile.steps {
        println!("{:<18} {:>7.3} {:>7.3} {:>8.1}", s.name, s.ratio_mean, s.ratio_std, s.length_mean);
    }
    Ok(())
}
