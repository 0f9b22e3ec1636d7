//! Static vs continuous batching on four requests of lengths 3, 6, 8 and 9.

use ecot_sched::batcher::{continuous_batch, static_batch, GenerationRequest, Slot};
use ecot_sched::harness::{cmd_batch_demo, FIG5_WORKLOAD};

fn draw(name: &str, iterations: &[Vec<Slot>]) {
    println!("{name}:");
    for slot in 0..iterations[0].len() {
        let row: String = iterations
            .iter()
            .map(|it| match it[slot] {
                Slot::Request(id) => char::from(b'A' + id as u8),
                Slot::Pad => '.',
                Slot::Empty => ' ',
            })
            .collect();
        println!("  slot {slot} |{row}|");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (lengths, slots, pad_to) = FIG5_WORKLOAD;
    let requests = GenerationRequest::from_lengths(&lengths);
    draw("static", static_batch(&requests, slots, Some(pad_to))?.iterations());
    draw("continuous", continuous_batch(&requests, slots)?.iterations());
    println!("\n{}", cmd_batch_demo(&lengths, slots, Some(pad_to))?);
    Ok(())
}
