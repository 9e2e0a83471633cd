//! From a cross-performance matrix to a deployment map: distances, single
//! linkage, dendrogram cuts at several heights, and an exact-K cut.
//!
//!     cargo run -p csbad --example camera_clustering

use csbad::cluster::{cut_k, cut_threshold, deployment_map, distance_matrix, single_linkage};
use csbad::metrics::{matrix_to_csv, CrossPerformanceMatrix};

fn main() {
    // six cameras in three pairs: models score high on their own pair's
    // validation sets and fall off elsewhere
    let rows: Vec<Vec<f64>> = (0..6)
        .map(|i| {
            (0..6)
                .map(|j| {
                    let same_pair = i / 2 == j / 2;
                    let base = if same_pair { 0.72 } else { 0.31 };
                    base - 0.02 * ((i as f64 - j as f64).abs() / 5.0)
                })
                .collect()
        })
        .collect();
    let matrix = CrossPerformanceMatrix::from_rows(rows).unwrap();
    print!("{}", matrix_to_csv(&matrix, &[0, 1, 2, 3, 4, 5]));

    let distances = distance_matrix(&matrix).unwrap();
    let dendrogram = single_linkage(&distances);
    println!("\nmerge sequence (left, right, height, size):");
    for m in dendrogram.merges() {
        println!(
            "  ({}, {}) @ {:.4} -> size {}",
            m.left, m.right, m.height, m.size
        );
    }

    for t in [0.05, 0.4, 2.0] {
        let p = cut_threshold(&dendrogram, t);
        println!(
            "\ncut at t = {t}: K = {}, assignment = {:?}",
            p.k, p.assignment
        );
    }

    let p = cut_k(&dendrogram, 3).unwrap();
    let map = deployment_map(&p);
    println!("\nexact K = 3: assignment = {:?}", p.assignment);
    println!(
        "deployment: camera 4 is served by cluster model {}",
        map.cluster_of(4)
    );
}
