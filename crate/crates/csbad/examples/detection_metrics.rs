//! IoU matching, average precision, mAP50-95, and the margin of error on a
//! small hand-checkable scene.
//!
//!     cargo run -p csbad --example detection_metrics

use csbad::core::{BoundingBox, Detection};
use csbad::metrics::{
    average_precision, iou_thresholds_50_95, map_50_95, margin_of_error, match_detections, EvalPair,
};

fn det(x0: f64, y0: f64, x1: f64, y1: f64, conf: f64) -> Detection {
    Detection::new(BoundingBox::new(x0, y0, x1, y1).unwrap(), conf, 0).unwrap()
}

fn main() {
    // two ground-truth objects; one prediction overlaps the first at IoU 0.8,
    // the second prediction hits nothing
    let pair = EvalPair {
        predictions: vec![det(0.0, 0.0, 1.0, 0.8, 0.9), det(5.0, 5.0, 6.0, 6.0, 0.8)],
        ground_truth: vec![det(0.0, 0.0, 1.0, 1.0, 1.0), det(2.0, 2.0, 3.0, 3.0, 1.0)],
    };

    println!("greedy matching at IoU 0.5:");
    for outcome in match_detections(&pair, 0.5) {
        println!(
            "  prediction {} -> {}",
            outcome.prediction,
            match outcome.ground_truth {
                Some(gt) => format!("ground truth {gt} (IoU {:.2})", outcome.iou),
                None => "unmatched".to_string(),
            }
        );
    }

    let pairs = vec![pair];
    println!("\nAP by IoU threshold:");
    for t in iou_thresholds_50_95() {
        println!("  AP@{t:.2} = {:.3}", average_precision(&pairs, t).unwrap());
    }
    println!("mAP50-95 = {:.4}", map_50_95(&pairs).unwrap());

    let scores = [0.52, 0.48, 0.55, 0.50, 0.47, 0.51];
    println!(
        "\nsix-seed score set {:?}\n  mean {:.3}, MoE(z=1.96) {:.3}",
        scores,
        scores.iter().sum::<f64>() / scores.len() as f64,
        margin_of_error(&scores, 1.96).unwrap()
    );
}
