//! Drive every SELECT strategy over one synthetic stream and compare what
//! they pick.
//!
//!     cargo run -p csbad --example stream_selection

use csbad::core::frame_confidence_score;
use csbad::select::{percentile_threshold, run_selector, SelectConfig, Strategy};
use csbad::simworld::{generate_stream, WorldSpec};

fn main() {
    let mut world = WorldSpec::planted(1, 1, 0.0, 42);
    world.frames_per_stream = 1200;
    world.activity = vec![3.0];
    world.activity_ramp_frames = 300; // the stream wakes up slowly

    let frames = generate_stream(&world, 0);
    let scores: Vec<f64> = frames.iter().map(frame_confidence_score).collect();
    println!(
        "stream 0: {} frames, {} with objects, mean score {:.3}",
        frames.len(),
        scores.iter().filter(|&&s| s > 0.0).count(),
        scores.iter().sum::<f64>() / scores.len() as f64
    );

    let warmup = 120;
    let delta = percentile_threshold(&scores[..warmup], 0.1).unwrap();
    println!("warm-up of {warmup} frames puts the top-confidence threshold at {delta:.3}\n");

    println!(
        "{:<28} {:>8} {:>12} {:>10}",
        "strategy", "selected", "frames seen", "first t"
    );
    for strategy in Strategy::ALL {
        let cfg = SelectConfig {
            strategy,
            alpha: 0.1,
            warmup,
            budget: 32,
            bernoulli_b: 0.1,
            rng_seed: 7,
        };
        let run = run_selector(cfg, frames.iter().cloned()).unwrap();
        println!(
            "{:<28} {:>8} {:>12} {:>10}",
            strategy.name(),
            format!(
                "{}{}",
                run.selected.len(),
                if run.shortfall.is_some() { "*" } else { "" }
            ),
            run.frames_seen,
            run.selected.first().map(|r| r.t as i64).unwrap_or(-1),
        );
    }
    println!("\n(* = budget shortfall: the stream ended first)");
}
