//! A long tail request forces static batching to pad every short one.

use ecot_sched::batcher::{continuous_batch, schedule_cost, static_batch, GenerationRequest, LatencyModel};
use ecot_sched::harness::TOKEN_REDUCTION_WORKLOAD;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (lengths, slots, pad_to) = TOKEN_REDUCTION_WORKLOAD;
    let requests = GenerationRequest::from_lengths(&lengths);
    let stat = static_batch(&requests, slots, Some(pad_to))?;
    let cont = continuous_batch(&requests, slots)?;
    let model = LatencyModel::tokens_only(1.0, 0.36);
    println!("lengths {lengths:?} on {slots} slots");
    println!(
        "static:     {:>4} slot-iterations, cost {:.1}",
        stat.occupied_slot_iterations(),
        schedule_cost(&stat, &model)
    );
    println!(
        "continuous: {:>4} slot-iterations, cost {:.1}",
        cont.occupied_slot_iterations(),
        schedule_cost(&cont, &model)
    );
    println!(
        "reduction {:.2}x",
        stat.occupied_slot_iterations() as f64 / cont.occupied_slot_iterations() as f64
    );
    Ok(())
}
