//! Action faithfulness as the reasoning prefix grows, for synchronous and
//! asynchronous scheduling.

use ecot_sched::harness::{faithfulness_pool, run_cells, ExperimentSpec};
use ecot_sched::metrics::faithfulness_curve;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = ExperimentSpec::bundled("faithfulness")?;
    spec.timesteps = 80;
    let cells = run_cells(&spec)?;
    let policy = spec.faithfulness.policy(spec.schema.num_reasoning(), spec.modes[0].action_dim)?;
    for mode in ["parallel_sync", "parallel_async"] {
        let pool = faithfulness_pool(&spec, &cells, mode);
        let curve = faithfulness_curve(&policy, &pool, 150, spec.seed)?;
        let means: Vec<String> = curve.mean.iter().map(|m| format!("{m:6.1}")).collect();
        println!("{mode:<15} {}", means.join(" "));
    }
    Ok(())
}
