//! A tour of the synthetic world: stream generation, teacher noise at
//! several capacities, label quality, and the transfer-performance surface.
//!
//!     cargo run -p csbad --example synthetic_world

use csbad::core::SampleDatabase;
use csbad::simworld::{
    database_label_quality, generate_stream, sim_train, teacher_label, transfer_perf, SimTeacher,
    WorldSpec,
};

fn main() {
    let mut world = WorldSpec::planted(6, 3, 0.05, 2024);
    world.frames_per_stream = 600;
    world.activity_ramp_frames = 0;

    let frames = generate_stream(&world, 0);
    let objects: usize = frames
        .iter()
        .map(|f| f.ground_truth.as_ref().unwrap().len())
        .sum();
    println!(
        "stream 0: {} frames, {} objects ({:.2}/frame)",
        frames.len(),
        objects,
        objects as f64 / frames.len() as f64
    );

    println!("\nteacher capacity sweep (B = 64, no jitter):");
    println!("{:>9} {:>14}", "capacity", "label quality");
    for capacity in [1.0, 0.9, 0.7, 0.5, 0.3] {
        let teacher = SimTeacher {
            capacity,
            jitter_sigma: 0.0,
            miss_rate0: 0.0,
            spurious_rate0: 0.1,
            seed: 5,
        };
        let mut db = SampleDatabase::new(0, 64);
        for frame in &frames {
            if db.is_full() {
                break;
            }
            db.insert(frame.frame_ref(), teacher_label(&teacher, frame).unwrap())
                .unwrap();
        }
        println!(
            "{capacity:>9.1} {:>14.3}",
            database_label_quality(&world, &db)
        );
    }

    // transfer surface: a model trained on stream 0 evaluated everywhere
    let teacher = SimTeacher::perfect(5);
    let mut db = SampleDatabase::new(0, 64);
    for frame in &frames {
        if db.is_full() {
            break;
        }
        db.insert(frame.frame_ref(), teacher_label(&teacher, frame).unwrap())
            .unwrap();
    }
    let model = sim_train(&world, &[&db]).unwrap();
    println!("\nmodel trained on stream 0 (64 samples), scored on each stream:");
    for target in 0..world.n_streams as u32 {
        println!(
            "  stream {target} (domain distance {:.2}): {:.3}",
            world.domain_distance(0, target),
            transfer_perf(&model, target, &world, model.label_quality, 0.0)
        );
    }
}
