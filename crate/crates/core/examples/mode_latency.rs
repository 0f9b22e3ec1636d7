//! Mean per-timestep latency of every scheduling mode on the calibrated
//! synthetic backend. Pass a timestep count to shorten the run.

use ecot_sched::harness::{run_cells, ExperimentSpec};
use ecot_sched::metrics::ModeTable;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = ExperimentSpec::bundled("table1")?;
    if let Some(t) = std::env::args().nth(1) {
        spec.timesteps = t.parse()?;
    }
    let cells = run_cells(&spec)?;
    let lat: Vec<_> = cells
        .iter()
        .map(|c| (c.config.label(), c.report.latencies(), c.report.total_tokens()))
        .collect();
    let table = ModeTable::build(lat.iter().map(|(l, v, t)| (l.as_str(), v.as_slice(), *t)))?;
    println!("{:<16} {:>9} {:>8} {:>8} {:>10}", "mode", "mean_ms", "std_ms", "speedup", "reference");
    for row in &table.rows {
        println!(
            "{:<16} {:>9.1} {:>8.1} {:>8.2} {:>10}",
            row.mode,
            row.summary.mean_ms,
            row.summary.std_ms,
            row.speedup.unwrap_or(f64::NAN),
            row.reference_ms.map_or("-".into(), |v| format!("{v:.0}"))
        );
    }
    Ok(())
}
