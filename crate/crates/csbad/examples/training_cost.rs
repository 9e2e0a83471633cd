//! Training-cost accounting: how adjusted epochs keep the iteration count
//! constant across cluster counts, versus fixed epochs where it scales with
//! cluster size.
//!
//!     cargo run -p csbad --example training_cost

use csbad::orchestrator::{adjusted_epochs, budget_iterations, total_iterations};

fn main() {
    let (budget, batch, epochs_k1, n_streams) = (1500usize, 16u32, 100u32, 9usize);
    println!(
        "B = {budget} frames/stream, batch {batch}, {epochs_k1} epochs at K=1, N = {n_streams}\n"
    );
    println!(
        "{:>4} {:>16} {:>20} {:>20}",
        "n_k", "adjusted epochs", "iterations (const)", "iterations (literal)"
    );
    for n_k in 1..=n_streams {
        println!(
            "{:>4} {:>16.2} {:>20} {:>20.1}",
            n_k,
            adjusted_epochs(epochs_k1, n_streams, n_k).unwrap(),
            total_iterations(budget, batch, epochs_k1, n_streams, n_k),
            budget_iterations(budget, batch, epochs_k1, n_streams, n_k),
        );
    }
    println!(
        "\nevery cluster model gets exactly {} weight updates regardless of n_k",
        total_iterations(budget, batch, epochs_k1, n_streams, 1)
    );
}
