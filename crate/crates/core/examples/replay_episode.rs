//! Records an episode to a JSONL log, then replays it through a different
//! scheduler and profiles the log.

use ecot_sched::backend::{ReplayBackend, SyntheticBackend, SyntheticProfile};
use ecot_sched::harness::cmd_profile;
use ecot_sched::schedulers::{run_episode, EpisodeInput, Mode, Scheduler, SchedulerConfig};
use ecot_sched::trace::{RatioGranularity, StepSchema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = StepSchema::ecot_default();
    let dir = std::env::temp_dir().join("ecot-sched-replay");
    std::fs::create_dir_all(&dir)?;
    let log = dir.join("trace.jsonl");

    let backend = SyntheticBackend::new(&schema, &SyntheticProfile::ecot_default(4))?;
    let mut sched = Scheduler::new(SchedulerConfig::new(Mode::ParallelSync), &backend, schema.clone())?;
    let input = EpisodeInput::new("fold the towel", 4, 30);
    run_episode(&mut sched, &input).write_trace_log(std::fs::File::create(&log)?)?;

    let replay = ReplayBackend::from_log(&log)?;
    let mut sched = Scheduler::new(SchedulerConfig::new(Mode::Sequential), &replay, schema)?;
    let report = run_episode(&mut sched, &input);
    println!(
        "replayed {} timesteps, mean latency {:.1} ms",
        report.results.len(),
        report.mean_latency().unwrap_or(0.0)
    );

    let profile = cmd_profile(&[log.clone()], RatioGranularity::Token, None)?;
    for s in &profile.steps {
        println!("{:<18} ratio {:.3}", s.name, s.ratio_mean);
    }
    println!("log at {}", log.display());
    Ok(())
}
