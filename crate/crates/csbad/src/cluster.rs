//! Hierarchical grouping of streams: distance matrix over model performance
//! vectors, single-linkage agglomeration into a dendrogram, and threshold or
//! exact-K cuts producing a flat partition plus the stream-to-cluster map.
//!
//! Merge records use node ids `0..n-1` for leaves and `n..2n-2` for internal
//! nodes in merge order. Ties between candidate merges break on the smallest
//! `(left, right)` id pair, so dendrograms are reproducible. Threshold cuts
//! are inclusive: merges at exactly the cut height are kept.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::CrossPerformanceMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("k = {k} out of range 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("invalid dendrogram: {0}")]
    InvalidDendrogram(String),
}

/// Symmetric pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ClusterError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(ClusterError::InvalidMatrix("must be square".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(ClusterError::InvalidMatrix(format!(
                        "entry ({i}, {j}) = {v} is not a finite non-negative distance"
                    )));
                }
                if i == j && v != 0.0 {
                    return Err(ClusterError::InvalidMatrix(format!(
                        "diagonal entry ({i}, {i}) = {v} is not zero"
                    )));
                }
                if (v - rows[j][i]).abs() > 1e-12 {
                    return Err(ClusterError::InvalidMatrix(format!(
                        "entries ({i}, {j}) and ({j}, {i}) differ"
                    )));
                }
            }
        }
        Ok(DistanceMatrix {
            n,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Euclidean distances between the rows of a cross-performance matrix.
pub fn distance_matrix(m: &CrossPerformanceMatrix) -> Result<DistanceMatrix, ClusterError> {
    let n = m.n();
    if n < 2 {
        return Err(ClusterError::InvalidMatrix(
            "need at least 2 streams".into(),
        ));
    }
    for i in 0..n {
        for j in 0..n {
            if !m.get(i, j).is_finite() {
                return Err(ClusterError::InvalidMatrix(format!(
                    "performance entry ({i}, {j}) is not finite"
                )));
            }
        }
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = m
                .row(i)
                .iter()
                .zip(m.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, values })
}

/// One agglomeration step: nodes `left < right` merge at `height` into a
/// cluster of `size` leaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// A stepwise dendrogram over `n_leaves` observations: `n_leaves - 1` merges
/// with non-decreasing heights (single linkage is monotone).
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    n_leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn from_merges(n_leaves: usize, merges: Vec<Merge>) -> Result<Self, ClusterError> {
        if n_leaves < 1 || merges.len() + 1 != n_leaves {
            return Err(ClusterError::InvalidDendrogram(format!(
                "{} leaves require {} merges, found {}",
                n_leaves,
                n_leaves.saturating_sub(1),
                merges.len()
            )));
        }
        let mut sizes = vec![1usize; 2 * n_leaves - 1];
        let mut used = vec![false; 2 * n_leaves - 1];
        let mut prev_height = f64::NEG_INFINITY;
        for (step, m) in merges.iter().enumerate() {
            let new_id = n_leaves + step;
            if m.left >= m.right || m.right >= new_id {
                return Err(ClusterError::InvalidDendrogram(format!(
                    "merge {step} joins ids ({}, {}) out of order",
                    m.left, m.right
                )));
            }
            if used[m.left] || used[m.right] {
                return Err(ClusterError::InvalidDendrogram(format!(
                    "merge {step} reuses an already merged node"
                )));
            }
            if m.height < prev_height {
                return Err(ClusterError::InvalidDendrogram(format!(
                    "merge {step} height {} below previous {}",
                    m.height, prev_height
                )));
            }
            if m.size != sizes[m.left] + sizes[m.right] {
                return Err(ClusterError::InvalidDendrogram(format!(
                    "merge {step} size {} != {} + {}",
                    m.size, sizes[m.left], sizes[m.right]
                )));
            }
            used[m.left] = true;
            used[m.right] = true;
            sizes[new_id] = m.size;
            prev_height = m.height;
        }
        Ok(Dendrogram { n_leaves, merges })
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }
}

/// Single-linkage agglomerative clustering of a distance matrix.
///
/// At every step the two clusters at minimal single-linkage distance
/// `L(A, B) = min { D[i][j] : i in A, j in B }` merge at that distance.
///
/// ```
/// use csbad::cluster::{cut_threshold, single_linkage, DistanceMatrix};
///
/// let d = DistanceMatrix::from_rows(vec![
///     vec![0.0, 1.0, 4.0],
///     vec![1.0, 0.0, 2.0],
///     vec![4.0, 2.0, 0.0],
/// ])
/// .unwrap();
/// let dendrogram = single_linkage(&d);
/// let heights: Vec<f64> = dendrogram.merges().iter().map(|m| m.height).collect();
/// assert_eq!(heights, vec![1.0, 2.0]);
/// assert_eq!(cut_threshold(&dendrogram, 1.5).assignment, vec![0, 0, 1]);
/// ```
pub fn single_linkage(d: &DistanceMatrix) -> Dendrogram {
    let n = d.n();
    // Cluster-to-cluster single-linkage distances, maintained with the
    // Lance-Williams update d(A+B, C) = min(d(A, C), d(B, C)).
    // active[i] = Some(node_id); index doubles as the slot in `dist`.
    let mut active: Vec<Option<usize>> = (0..n).map(Some).collect();
    let mut dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| d.get(i, j)).collect())
        .collect();
    let mut merges: Vec<Merge> = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None; // (dist, left_id, right_id, slot_a, slot_b)
        for a in 0..n {
            let Some(id_a) = active[a] else { continue };
            for b in (a + 1)..n {
                let Some(id_b) = active[b] else { continue };
                let dij = dist[a][b];
                let (left, right) = if id_a < id_b {
                    (id_a, id_b)
                } else {
                    (id_b, id_a)
                };
                let candidate = (dij, left, right, a, b);
                let better = match best {
                    None => true,
                    Some((bd, bl, br, _, _)) => dij < bd || (dij == bd && (left, right) < (bl, br)),
                };
                if better {
                    best = Some(candidate);
                }
            }
        }
        let (height, left, right, slot_a, slot_b) = best.expect("at least two active clusters");
        let size_left = if left < n { 1 } else { merges[left - n].size };
        let size_right = if right < n { 1 } else { merges[right - n].size };
        merges.push(Merge {
            left,
            right,
            height,
            size: size_left + size_right,
        });
        // merged cluster lives in slot_a with the new node id
        active[slot_a] = Some(n + step);
        active[slot_b] = None;
        for c in 0..n {
            if c != slot_a && active[c].is_some() {
                let merged = dist[slot_a][c].min(dist[slot_b][c]);
                dist[slot_a][c] = merged;
                dist[c][slot_a] = merged;
            }
        }
    }
    Dendrogram {
        n_leaves: n,
        merges,
    }
}

/// Flat assignment of streams to clusters `0..k-1`, labels ordered by each
/// cluster's smallest leaf id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub k: usize,
    pub assignment: Vec<usize>,
}

/// How to flatten a dendrogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CutRule {
    /// Discard merges above this height (inclusive cut: equal heights kept).
    Threshold(f64),
    /// Undo the last `k - 1` merges.
    K(usize),
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

fn partition_from_prefix(dg: &Dendrogram, applied_merges: usize) -> Partition {
    let n = dg.n_leaves();
    // map every node id to one leaf inside it
    let mut node_leaf: Vec<usize> = (0..n).collect();
    let mut uf = UnionFind::new(n);
    for (step, m) in dg.merges()[..applied_merges].iter().enumerate() {
        uf.union(node_leaf[m.left], node_leaf[m.right]);
        node_leaf.push(node_leaf[m.left]);
        debug_assert_eq!(node_leaf.len() - 1, n + step);
    }
    // label components by ascending smallest leaf id
    let mut label_of_root: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut assignment = vec![0; n];
    for (leaf, slot) in assignment.iter_mut().enumerate() {
        let root = uf.find(leaf);
        *slot = *label_of_root[root].get_or_insert_with(|| {
            let l = next;
            next += 1;
            l
        });
    }
    Partition {
        k: next,
        assignment,
    }
}

/// Cut at height `t`: clusters are the connected components after discarding
/// merges with height strictly above `t`.
pub fn cut_threshold(dg: &Dendrogram, t: f64) -> Partition {
    let applied = dg.merges().iter().take_while(|m| m.height <= t).count();
    partition_from_prefix(dg, applied)
}

/// Cut into exactly `k` clusters by undoing the last `k - 1` merges.
pub fn cut_k(dg: &Dendrogram, k: usize) -> Result<Partition, ClusterError> {
    let n = dg.n_leaves();
    if k < 1 || k > n {
        return Err(ClusterError::InvalidK { k, n });
    }
    Ok(partition_from_prefix(dg, n - k))
}

/// The stream-to-cluster assignment used to deploy trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentMap {
    map: Vec<usize>,
}

impl DeploymentMap {
    pub fn cluster_of(&self, stream: usize) -> usize {
        self.map[stream]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Materialize the partition as a total stream-to-cluster map.
pub fn deployment_map(p: &Partition) -> DeploymentMap {
    DeploymentMap {
        map: p.assignment.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::CrossPerformanceMatrix;
    use proptest::prelude::*;

    fn three_leaf() -> Dendrogram {
        let d = DistanceMatrix::from_rows(vec![
            vec![0.0, 1.0, 4.0],
            vec![1.0, 0.0, 2.0],
            vec![4.0, 2.0, 0.0],
        ])
        .unwrap();
        single_linkage(&d)
    }

    #[test]
    fn distance_of_identical_rows_is_zero() {
        let m = CrossPerformanceMatrix::from_rows(vec![vec![0.4, 0.6], vec![0.4, 0.6]]).unwrap();
        let d = distance_matrix(&m).unwrap();
        assert_eq!(d.get(0, 1), 0.0);
    }

    #[test]
    fn distance_identity_matrix() {
        let m = CrossPerformanceMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let d = distance_matrix(&m).unwrap();
        assert!((d.get(0, 1) - 2.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn distance_scales_linearly() {
        let rows = vec![
            vec![0.9, 0.1, 0.3],
            vec![0.2, 0.8, 0.5],
            vec![0.4, 0.4, 0.9],
        ];
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|v| v * 3.0).collect())
            .collect();
        let d1 = distance_matrix(&CrossPerformanceMatrix::from_rows(rows).unwrap()).unwrap();
        let d2 = distance_matrix(&CrossPerformanceMatrix::from_rows(scaled).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((d2.get(i, j) - 3.0 * d1.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn three_leaf_merge_sequence() {
        let dg = three_leaf();
        assert_eq!(
            dg.merges(),
            &[
                Merge {
                    left: 0,
                    right: 1,
                    height: 1.0,
                    size: 2
                },
                Merge {
                    left: 2,
                    right: 3,
                    height: 2.0,
                    size: 3
                },
            ]
        );
    }

    #[test]
    fn uniform_metric_merges_at_constant_height() {
        let c = 0.7;
        let d = DistanceMatrix::from_rows(vec![
            vec![0.0, c, c, c],
            vec![c, 0.0, c, c],
            vec![c, c, 0.0, c],
            vec![c, c, c, 0.0],
        ])
        .unwrap();
        let dg = single_linkage(&d);
        assert!(dg.merges().iter().all(|m| m.height == c));
    }

    #[test]
    fn two_separated_pairs() {
        // pairs (0,1) and (2,3) within 0.1, across 9.0
        let d = DistanceMatrix::from_rows(vec![
            vec![0.0, 0.1, 9.0, 9.0],
            vec![0.1, 0.0, 9.0, 9.0],
            vec![9.0, 9.0, 0.0, 0.1],
            vec![9.0, 9.0, 0.1, 0.0],
        ])
        .unwrap();
        let dg = single_linkage(&d);
        let heights: Vec<f64> = dg.merges().iter().map(|m| m.height).collect();
        assert_eq!(heights, vec![0.1, 0.1, 9.0]);
    }

    #[test]
    fn threshold_cut_examples() {
        let dg = three_leaf();
        let p = cut_threshold(&dg, 1.5);
        assert_eq!(
            p,
            Partition {
                k: 2,
                assignment: vec![0, 0, 1]
            }
        );
        assert_eq!(cut_threshold(&dg, 100.0).k, 1);
        assert_eq!(cut_threshold(&dg, 0.5).k, 3);
        // inclusive at exactly the merge height
        assert_eq!(cut_threshold(&dg, 1.0).k, 2);
    }

    #[test]
    fn k_cut_examples() {
        let dg = three_leaf();
        assert_eq!(cut_k(&dg, 1).unwrap().k, 1);
        assert_eq!(
            cut_k(&dg, 2).unwrap(),
            Partition {
                k: 2,
                assignment: vec![0, 0, 1]
            }
        );
        assert_eq!(cut_k(&dg, 3).unwrap().assignment, vec![0, 1, 2]);
        assert!(matches!(cut_k(&dg, 0), Err(ClusterError::InvalidK { .. })));
        assert!(matches!(cut_k(&dg, 4), Err(ClusterError::InvalidK { .. })));
    }

    #[test]
    fn deployment_map_realizes_partition() {
        let p = Partition {
            k: 2,
            assignment: vec![0, 0, 1],
        };
        let map = deployment_map(&p);
        assert_eq!(map.as_slice(), &[0, 0, 1]);
        let all_in_one = deployment_map(&Partition {
            k: 1,
            assignment: vec![0, 0, 0],
        });
        assert!(all_in_one.as_slice().iter().all(|&c| c == 0));
        let singletons = deployment_map(&Partition {
            k: 3,
            assignment: vec![0, 1, 2],
        });
        assert_eq!(singletons.cluster_of(2), 2);
    }

    #[test]
    fn dendrogram_json_shape() {
        let dg = three_leaf();
        let json = serde_json::to_string(dg.merges()).unwrap();
        assert_eq!(
            json,
            r#"[{"left":0,"right":1,"height":1.0,"size":2},{"left":2,"right":3,"height":2.0,"size":3}]"#
        );
        let p = cut_threshold(&dg, 1.5);
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"k":2,"assignment":[0,0,1]}"#
        );
    }

    #[test]
    fn rejects_invalid_matrices() {
        assert!(DistanceMatrix::from_rows(vec![vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(vec![vec![0.5, 1.0], vec![1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::from_rows(vec![vec![0.0, -1.0], vec![-1.0, 0.0]]).is_err());
        let m = CrossPerformanceMatrix::from_rows(vec![vec![0.5]]).unwrap();
        assert!(distance_matrix(&m).is_err());
    }

    /// Naive oracle working directly on leaf sets: repeatedly merge the two
    /// clusters whose minimal leaf-to-leaf distance is smallest.
    fn brute_force_single_linkage(d: &DistanceMatrix) -> Vec<Merge> {
        let n = d.n();
        let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
        let mut merges = Vec::new();
        for step in 0..n - 1 {
            let mut best: Option<(f64, usize, usize)> = None;
            for a in 0..clusters.len() {
                for b in (a + 1)..clusters.len() {
                    let linkage = clusters[a]
                        .1
                        .iter()
                        .flat_map(|&i| clusters[b].1.iter().map(move |&j| d.get(i, j)))
                        .fold(f64::INFINITY, f64::min);
                    let (l, r) = {
                        let (ia, ib) = (clusters[a].0, clusters[b].0);
                        if ia < ib {
                            (ia, ib)
                        } else {
                            (ib, ia)
                        }
                    };
                    let better = match best {
                        None => true,
                        Some((bd, bl, br)) => linkage < bd || (linkage == bd && (l, r) < (bl, br)),
                    };
                    if better {
                        best = Some((linkage, l, r));
                    }
                }
            }
            let (height, left, right) = best.unwrap();
            let pos_a = clusters.iter().position(|c| c.0 == left).unwrap();
            let pos_b = clusters.iter().position(|c| c.0 == right).unwrap();
            let mut members = clusters[pos_a].1.clone();
            members.extend(clusters[pos_b].1.iter());
            let size = members.len();
            clusters.retain(|c| c.0 != left && c.0 != right);
            clusters.push((n + step, members));
            merges.push(Merge {
                left,
                right,
                height,
                size,
            });
        }
        merges
    }

    fn kruskal_mst_weights(d: &DistanceMatrix) -> Vec<f64> {
        let n = d.n();
        let mut edges: Vec<(f64, usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (0.0, i, j)))
            .map(|(_, i, j)| (d.get(i, j), i, j))
            .collect();
        edges.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut uf = UnionFind::new(n);
        let mut weights = Vec::new();
        for (w, i, j) in edges {
            if uf.find(i) != uf.find(j) {
                uf.union(i, j);
                weights.push(w);
            }
        }
        weights
    }

    #[allow(clippy::needless_range_loop)] // symmetric fill over (i, j)
    fn arb_distance_matrix() -> impl Strategy<Value = DistanceMatrix> {
        (2usize..=8).prop_flat_map(|n| {
            proptest::collection::vec(0.01..10.0f64, n * (n - 1) / 2).prop_map(move |upper| {
                let mut rows = vec![vec![0.0; n]; n];
                let mut it = upper.into_iter();
                for i in 0..n {
                    for j in (i + 1)..n {
                        let v = it.next().unwrap();
                        rows[i][j] = v;
                        rows[j][i] = v;
                    }
                }
                DistanceMatrix::from_rows(rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn heights_are_monotone(d in arb_distance_matrix()) {
            let dg = single_linkage(&d);
            let heights: Vec<f64> = dg.merges().iter().map(|m| m.height).collect();
            prop_assert!(heights.windows(2).all(|w| w[0] <= w[1]));
            Dendrogram::from_merges(d.n(), dg.merges().to_vec()).unwrap();
        }

        #[test]
        fn matches_brute_force_oracle(d in arb_distance_matrix()) {
            let dg = single_linkage(&d);
            let oracle = brute_force_single_linkage(&d);
            prop_assert_eq!(dg.merges(), oracle.as_slice());
        }

        #[test]
        fn merge_heights_equal_mst_weights(d in arb_distance_matrix()) {
            let mut heights: Vec<f64> = single_linkage(&d).merges().iter().map(|m| m.height).collect();
            let mut mst = kruskal_mst_weights(&d);
            heights.sort_by(f64::total_cmp);
            mst.sort_by(f64::total_cmp);
            prop_assert_eq!(heights.len(), mst.len());
            for (h, w) in heights.iter().zip(&mst) {
                prop_assert!((h - w).abs() < 1e-12);
            }
        }

        #[test]
        fn k_is_non_increasing_in_threshold(d in arb_distance_matrix(), cuts in proptest::collection::vec(0.0..12.0f64, 2..6)) {
            let dg = single_linkage(&d);
            let mut sorted = cuts.clone();
            sorted.sort_by(f64::total_cmp);
            let ks: Vec<usize> = sorted.iter().map(|&t| cut_threshold(&dg, t).k).collect();
            prop_assert!(ks.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(cut_threshold(&dg, f64::INFINITY).k, 1);
            prop_assert_eq!(cut_threshold(&dg, -1e-9).k, d.n());
        }

        #[test]
        fn exact_k_cuts_ignore_uniform_scaling(d in arb_distance_matrix(), scale in 0.1..50.0f64, k in 1usize..8) {
            prop_assume!(k <= d.n());
            let scaled_rows: Vec<Vec<f64>> = (0..d.n())
                .map(|i| (0..d.n()).map(|j| d.get(i, j) * scale).collect())
                .collect();
            let scaled = DistanceMatrix::from_rows(scaled_rows).unwrap();
            let p1 = cut_k(&single_linkage(&d), k).unwrap();
            let p2 = cut_k(&single_linkage(&scaled), k).unwrap();
            prop_assert_eq!(p1, p2);
        }
    }
}
