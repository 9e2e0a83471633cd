//! The whole pipeline in memory: sample nine streams under a budget, label
//! with a slightly noisy teacher, cluster the streams by cross-domain model
//! performance, train one student per cluster at constant iteration cost,
//! deploy, and evaluate.
//!
//!     cargo run -p csbad --example end_to_end

use csbad::cli::{run_experiment, ExperimentConfig};

fn main() {
    let config: ExperimentConfig = serde_json::from_str(
        r#"{
            "world": { "n_streams": 9, "frames_per_stream": 1500, "activity_ramp_frames": 400 },
            "select": { "strategy": "top_confidence", "alpha": 0.1, "warmup": 120 },
            "budget": 24,
            "clustering": { "mode": "k", "value": 3 },
            "training": { "epochs_k1": 100, "batch_size": 16, "epoch_policy": "constant_iterations" },
            "teacher": { "capacity": 0.9 },
            "evaluation": { "validation_frames": 150 },
            "master_seed": 7
        }"#,
    )
    .unwrap();
    config.validate().unwrap();

    let (report, world) = run_experiment(&config, config.master_seed).unwrap();

    println!("sampled {} streams:", world.n_streams);
    for s in &report.selection {
        println!(
            "  stream {}: {}/{} frames selected over {} seen",
            s.stream_id, s.selected, s.budget, s.frames_seen
        );
    }

    println!("\ncross-performance matrix (row = model, column = stream):");
    for i in 0..report.matrix.n() {
        let row: Vec<String> = (0..report.matrix.n())
            .map(|j| format!("{:.2}", report.matrix.get(i, j)))
            .collect();
        println!("  {}", row.join(" "));
    }

    println!(
        "\npartition into K = {} clusters: {:?}",
        report.partition.k, report.partition.assignment
    );
    println!("planted labels were:            {:?}", world.planted_labels);

    println!("\ntraining plans (constant-iterations policy):");
    for plan in &report.plans {
        println!(
            "  cluster {}: {} streams, {} samples, {} epochs, {} iterations",
            plan.cluster_id,
            plan.member_streams.len(),
            plan.samples_total,
            plan.epochs,
            plan.iterations
        );
    }

    let mean: f64 = report.scores.iter().map(|s| s.score).sum::<f64>() / report.scores.len() as f64;
    println!("\ndeployed-model scores per stream:");
    for s in &report.scores {
        println!("  stream {}: {:.3}", s.stream_id, s.score);
    }
    println!("mean {mean:.3}");
}
