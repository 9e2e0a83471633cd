//! End-to-end pipeline: per-stream sampling, teacher pseudo-labeling,
//! clustering, per-cluster training with adjusted epochs, and model
//! deployment, plus training-cost accounting.
//!
//! Teachers, trainers, and evaluators are injected interfaces; this crate
//! ships the synthetic implementations in [`crate::simworld`]. Real-DNN
//! backends are integration points, not deliverables.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    cut_k, cut_threshold, distance_matrix, single_linkage, CutRule, Dendrogram, DeploymentMap,
    DistanceMatrix, Partition,
};
use crate::core::{FrameRecord, PseudoLabelSet, SampleDatabase, ValidationSet};
use crate::metrics::{build_cross_performance_matrix, CrossPerformanceMatrix};
use crate::select::{Decision, SelectConfig, Selector, Shortfall};
use crate::util::exact_ratio;

#[derive(Debug, Error, PartialEq)]
pub enum OrchestratorError {
    #[error("cluster {0} has no samples to train on")]
    EmptyCluster(usize),
    #[error("no model registered for cluster {0}")]
    Deployment(usize),
    #[error("trainer failed on cluster {cluster}: {reason}")]
    Trainer { cluster: usize, reason: String },
    #[error("evaluator failed: {0}")]
    Evaluator(String),
    #[error("selector failed on stream {stream}: {reason}")]
    Selector { stream: u32, reason: String },
    #[error("invalid phase input: {0}")]
    InvalidInput(String),
}

/// Produces pseudo-labels for forwarded frames.
pub trait PseudoLabeler {
    fn label(&mut self, frame: &FrameRecord) -> Result<PseudoLabelSet, String>;
}

/// Trains one student model from scratch on a union of sample databases.
pub trait StudentTrainer {
    type Model;

    fn train(&mut self, members: &[&SampleDatabase], epochs: u32) -> Result<Self::Model, String>;
}

/// Scores a model on a validation set.
pub trait ModelEvaluator<M> {
    fn evaluate(&mut self, model: &M, validation: &ValidationSet) -> Result<f64, String>;
}

/// Extension point for continuous deployment: decides which samples carry
/// over into the next cycle. The shipped behavior retains nothing, i.e. a
/// carry-over budget of zero.
pub fn recycle(db: &mut SampleDatabase) {
    let _ = db;
}

/// Epoch adjustment `epochs_k1 * N / n_k` keeping the per-model weight-update
/// count constant across cluster counts.
pub fn adjusted_epochs(
    epochs_k1: u32,
    n_streams: usize,
    cluster_size: usize,
) -> Result<f64, OrchestratorError> {
    if cluster_size == 0 {
        return Err(OrchestratorError::EmptyCluster(0));
    }
    debug_assert!(epochs_k1 >= 1 && n_streams >= 1 && cluster_size <= n_streams);
    Ok(exact_ratio(
        epochs_k1 as u128 * n_streams as u128,
        cluster_size as u128,
    ))
}

/// Training iterations of a cluster of `cluster_size` streams under adjusted
/// epochs: `(B * n_k / batch) * (epochs_k1 * N / n_k) = B * N * epochs_k1 /
/// batch`. The cluster size cancels, which is the whole point: every cluster
/// model receives the same number of weight updates.
pub fn total_iterations(
    budget: usize,
    batch_size: u32,
    epochs_k1: u32,
    n_streams: usize,
    cluster_size: usize,
) -> f64 {
    assert!(
        budget >= 1 && batch_size >= 1 && epochs_k1 >= 1 && n_streams >= 1 && cluster_size >= 1
    );
    exact_ratio(
        budget as u128 * cluster_size as u128 * epochs_k1 as u128 * n_streams as u128,
        batch_size as u128 * cluster_size as u128,
    )
}

/// Literal per-stream-budget reading of the adjusted cost, `(B / batch) *
/// (epochs_k1 * N / n_k)`, which treats every cluster as if it trained on a
/// single stream's budget. Reported for comparison; unlike
/// [`total_iterations`] it varies with the cluster size.
pub fn budget_iterations(
    budget: usize,
    batch_size: u32,
    epochs_k1: u32,
    n_streams: usize,
    cluster_size: usize,
) -> f64 {
    assert!(
        budget >= 1 && batch_size >= 1 && epochs_k1 >= 1 && n_streams >= 1 && cluster_size >= 1
    );
    exact_ratio(
        budget as u128 * epochs_k1 as u128 * n_streams as u128,
        batch_size as u128 * cluster_size as u128,
    )
}

/// How cluster training budgets its epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochPolicy {
    /// Every cluster trains for `epochs_k1` epochs; iteration counts then
    /// scale with cluster size.
    Fixed,
    /// Epochs scale by `N / n_k` so all cluster models get the same
    /// iteration count.
    ConstantIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub epochs_k1: u32,
    pub batch_size: u32,
    pub policy: EpochPolicy,
}

/// Cost sheet for one cluster's training job. `epochs` is the integer count
/// the trainer runs (adjusted epochs round to the nearest integer, minimum
/// 1); `iterations` is the exact pre-rounding rational
/// `(samples / batch) * epochs_exact`, so the constant-iterations identity
/// holds exactly in the reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub cluster_id: usize,
    pub member_streams: Vec<u32>,
    pub samples_total: usize,
    pub epochs: u32,
    pub batch_size: u32,
    pub iterations: f64,
}

impl TrainingPlan {
    fn new(
        cluster_id: usize,
        member_streams: Vec<u32>,
        samples_total: usize,
        params: &TrainingParams,
        n_streams: usize,
    ) -> Result<Self, OrchestratorError> {
        let n_k = member_streams.len();
        if n_k == 0 || samples_total == 0 {
            return Err(OrchestratorError::EmptyCluster(cluster_id));
        }
        let (epochs, iterations) = match params.policy {
            EpochPolicy::Fixed => (
                params.epochs_k1,
                exact_ratio(
                    samples_total as u128 * params.epochs_k1 as u128,
                    params.batch_size as u128,
                ),
            ),
            EpochPolicy::ConstantIterations => {
                let exact = adjusted_epochs(params.epochs_k1, n_streams, n_k)?;
                let rounded = (exact.round() as u32).max(1);
                let iterations = exact_ratio(
                    samples_total as u128 * params.epochs_k1 as u128 * n_streams as u128,
                    params.batch_size as u128 * n_k as u128,
                );
                (rounded, iterations)
            }
        };
        Ok(TrainingPlan {
            cluster_id,
            member_streams,
            samples_total,
            epochs,
            batch_size: params.batch_size,
            iterations,
        })
    }
}

/// What one stream's sampling produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingOutcome {
    pub database: SampleDatabase,
    pub strategy: String,
    pub frames_seen: u64,
    pub forwarded: usize,
    pub teacher_failures: usize,
    pub shortfall: Option<Shortfall>,
}

/// Run every stream's selector over its frames; forwarded frames are
/// pseudo-labeled and inserted into that stream's database until the budget
/// is met or the stream ends. A teacher failure burns the forwarded slot
/// (recorded, frame skipped) and selection continues.
pub fn run_sampling_phase(
    configs: &[SelectConfig],
    streams: &[Vec<FrameRecord>],
    teacher: &mut dyn PseudoLabeler,
) -> Result<Vec<SamplingOutcome>, OrchestratorError> {
    if configs.len() != streams.len() {
        return Err(OrchestratorError::InvalidInput(format!(
            "{} selector configs for {} streams",
            configs.len(),
            streams.len()
        )));
    }
    let mut outcomes = Vec::with_capacity(streams.len());
    for (position, (cfg, frames)) in configs.iter().zip(streams).enumerate() {
        let stream_id = frames
            .first()
            .map(|f| f.stream_id)
            .unwrap_or(position as u32);
        let map_err = |reason: crate::select::SelectError| OrchestratorError::Selector {
            stream: stream_id,
            reason: reason.to_string(),
        };
        // validates the config (budget >= 1 among other things)
        let mut selector = Selector::new(cfg.clone()).map_err(map_err)?;
        let mut database = SampleDatabase::new(stream_id, cfg.budget);
        recycle(&mut database);
        let mut forwarded = 0;
        let mut teacher_failures = 0;
        for frame in frames {
            if selector.is_done() {
                break;
            }
            if selector.observe(frame).map_err(map_err)? == Decision::Forward {
                forwarded += 1;
                match teacher.label(frame) {
                    Ok(labels) => {
                        // the selector caps forwards at the budget, so only a
                        // malformed stream (repeated frame refs) can fail here
                        database.insert(frame.frame_ref(), labels).map_err(|e| {
                            OrchestratorError::InvalidInput(e.to_string())
                        })?;
                    }
                    Err(_) => teacher_failures += 1,
                }
            }
        }
        let shortfall = (database.len() < cfg.budget).then_some(Shortfall {
            budget: cfg.budget,
            selected: database.len(),
        });
        outcomes.push(SamplingOutcome {
            strategy: cfg.strategy.name().to_string(),
            frames_seen: selector.state().frames_seen,
            database,
            forwarded,
            teacher_failures,
            shortfall,
        });
    }
    Ok(outcomes)
}

/// Artifacts of the clustering phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPhase<M> {
    /// Stream-specific models, one per stream, trained on that stream alone.
    pub stream_models: Vec<M>,
    pub matrix: CrossPerformanceMatrix,
    pub distances: DistanceMatrix,
    pub dendrogram: Dendrogram,
    pub partition: Partition,
}

/// Train one model per stream, build the cross-performance matrix, derive
/// distances, agglomerate, and cut.
pub fn run_cluster_phase<T, E>(
    databases: &[SampleDatabase],
    validation_sets: &[ValidationSet],
    trainer: &mut T,
    evaluator: &mut E,
    cut: CutRule,
    step1_epochs: u32,
) -> Result<ClusterPhase<T::Model>, OrchestratorError>
where
    T: StudentTrainer,
    E: ModelEvaluator<T::Model>,
{
    let n = databases.len();
    if n < 2 {
        return Err(OrchestratorError::InvalidInput(
            "clustering needs at least 2 streams".into(),
        ));
    }
    if validation_sets.len() != n {
        return Err(OrchestratorError::InvalidInput(format!(
            "{} validation sets for {} streams",
            validation_sets.len(),
            n
        )));
    }
    let mut stream_models = Vec::with_capacity(n);
    for (i, db) in databases.iter().enumerate() {
        let model = trainer
            .train(&[db], step1_epochs)
            .map_err(|reason| OrchestratorError::Trainer { cluster: i, reason })?;
        stream_models.push(model);
    }
    let matrix = build_cross_performance_matrix(&stream_models, validation_sets, |m, v| {
        evaluator.evaluate(m, v)
    })
    .map_err(|e| OrchestratorError::Evaluator(e.to_string()))?;
    let distances =
        distance_matrix(&matrix).map_err(|e| OrchestratorError::Evaluator(e.to_string()))?;
    let dendrogram = single_linkage(&distances);
    let partition = match cut {
        CutRule::Threshold(t) => cut_threshold(&dendrogram, t),
        CutRule::K(k) => {
            cut_k(&dendrogram, k).map_err(|e| OrchestratorError::InvalidInput(e.to_string()))?
        }
    };
    Ok(ClusterPhase {
        stream_models,
        matrix,
        distances,
        dendrogram,
        partition,
    })
}

/// Trained cluster models plus their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRegistry<M> {
    models: BTreeMap<usize, M>,
    plans: BTreeMap<usize, TrainingPlan>,
    config_hash: u64,
}

impl<M> ModelRegistry<M> {
    pub fn model(&self, cluster_id: usize) -> Option<&M> {
        self.models.get(&cluster_id)
    }

    pub fn plan(&self, cluster_id: usize) -> Option<&TrainingPlan> {
        self.plans.get(&cluster_id)
    }

    pub fn plans(&self) -> impl Iterator<Item = &TrainingPlan> {
        self.plans.values()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Hash of the training parameters this registry was built with.
    pub fn config_hash(&self) -> u64 {
        self.config_hash
    }
}

fn hash_params(params: &TrainingParams, n_streams: usize) -> u64 {
    let mut h = DefaultHasher::new();
    params.epochs_k1.hash(&mut h);
    params.batch_size.hash(&mut h);
    matches!(params.policy, EpochPolicy::ConstantIterations).hash(&mut h);
    n_streams.hash(&mut h);
    h.finish()
}

/// Train one model per cluster on the union of its members' databases. All
/// models start from the same initial state (the trainer trains from
/// scratch), so a cluster's model depends only on its own samples.
pub fn run_training_phase<T>(
    partition: &Partition,
    databases: &[SampleDatabase],
    trainer: &mut T,
    params: &TrainingParams,
) -> Result<ModelRegistry<T::Model>, OrchestratorError>
where
    T: StudentTrainer,
{
    let n = databases.len();
    if partition.assignment.len() != n {
        return Err(OrchestratorError::InvalidInput(format!(
            "partition covers {} streams but {} databases given",
            partition.assignment.len(),
            n
        )));
    }
    let mut members: BTreeMap<usize, Vec<&SampleDatabase>> = BTreeMap::new();
    for (stream, &cluster) in partition.assignment.iter().enumerate() {
        members.entry(cluster).or_default().push(&databases[stream]);
    }

    let mut models = BTreeMap::new();
    let mut plans = BTreeMap::new();
    for (cluster_id, dbs) in members {
        let samples_total: usize = dbs.iter().map(|db| db.len()).sum();
        let member_streams: Vec<u32> = dbs.iter().map(|db| db.stream_id()).collect();
        let plan = TrainingPlan::new(cluster_id, member_streams, samples_total, params, n)?;
        let model =
            trainer
                .train(&dbs, plan.epochs)
                .map_err(|reason| OrchestratorError::Trainer {
                    cluster: cluster_id,
                    reason,
                })?;
        models.insert(cluster_id, model);
        plans.insert(cluster_id, plan);
    }
    debug_assert_eq!(
        plans.values().map(|p| p.samples_total).sum::<usize>(),
        databases.iter().map(|db| db.len()).sum::<usize>(),
        "partitioning must conserve samples"
    );
    Ok(ModelRegistry {
        models,
        plans,
        config_hash: hash_params(params, n),
    })
}

/// Resolve every stream's deployed model through the cluster map.
pub fn deploy<'r, M>(
    registry: &'r ModelRegistry<M>,
    map: &DeploymentMap,
) -> Result<Vec<&'r M>, OrchestratorError> {
    map.as_slice()
        .iter()
        .map(|&cluster| {
            registry
                .model(cluster)
                .ok_or(OrchestratorError::Deployment(cluster))
        })
        .collect()
}

/// Per-stream sampling summary for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub stream_id: u32,
    pub strategy: String,
    pub budget: usize,
    pub selected: usize,
    pub forwarded: usize,
    pub frames_seen: u64,
    pub teacher_failures: usize,
}

impl SelectionSummary {
    pub fn shortfall(&self) -> usize {
        self.budget.saturating_sub(self.selected)
    }
}

/// Final per-stream score of the deployed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamScore {
    pub stream_id: u32,
    pub strategy: String,
    pub budget: usize,
    pub k: usize,
    pub score: f64,
}

/// Everything one experiment produced. The run directory persists this, one
/// file per artifact, alongside the configuration echo.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub master_seed: u64,
    pub selection: Vec<SelectionSummary>,
    pub stream_ids: Vec<u32>,
    pub matrix: CrossPerformanceMatrix,
    pub dendrogram: Dendrogram,
    pub partition: Partition,
    pub plans: Vec<TrainingPlan>,
    pub scores: Vec<StreamScore>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::deployment_map;
    use crate::core::{BoundingBox, Detection};
    use crate::select::Strategy;
    use crate::simworld::{generate_stream, SimEvaluator, SimTeacher, SimTrainer, WorldSpec};

    fn frame(stream_id: u32, t: u64, conf: f64) -> FrameRecord {
        let bbox = BoundingBox::new(0.1, 0.1, 0.5, 0.5).unwrap();
        FrameRecord {
            stream_id,
            t,
            detections: vec![Detection::new(bbox, conf, 0).unwrap()],
            ground_truth: Some(vec![Detection::new(bbox, 1.0, 0).unwrap()]),
        }
    }

    fn nfirst_cfg(budget: usize) -> SelectConfig {
        SelectConfig {
            strategy: Strategy::NFirst,
            alpha: 0.5,
            warmup: 1,
            budget,
            bernoulli_b: 0.1,
            rng_seed: 0,
        }
    }

    struct PerfectTeacher;

    impl PseudoLabeler for PerfectTeacher {
        fn label(&mut self, frame: &FrameRecord) -> Result<PseudoLabelSet, String> {
            Ok(PseudoLabelSet {
                boxes: frame.ground_truth.clone().unwrap_or_default(),
            })
        }
    }

    struct FlakyTeacher {
        calls: usize,
    }

    impl PseudoLabeler for FlakyTeacher {
        fn label(&mut self, frame: &FrameRecord) -> Result<PseudoLabelSet, String> {
            self.calls += 1;
            if self.calls.is_multiple_of(2) {
                Err("teacher offline".into())
            } else {
                Ok(PseudoLabelSet {
                    boxes: frame.ground_truth.clone().unwrap_or_default(),
                })
            }
        }
    }

    #[test]
    fn adjusted_epochs_examples() {
        assert_eq!(adjusted_epochs(100, 9, 9).unwrap(), 100.0);
        assert_eq!(adjusted_epochs(100, 9, 3).unwrap(), 300.0);
        assert_eq!(adjusted_epochs(100, 9, 1).unwrap(), 900.0);
        assert!(matches!(
            adjusted_epochs(100, 9, 0),
            Err(OrchestratorError::EmptyCluster(_))
        ));
    }

    #[test]
    fn iteration_count_is_independent_of_cluster_size() {
        for n_k in 1..=9 {
            assert_eq!(total_iterations(1500, 16, 100, 9, n_k), 84375.0);
        }
        assert_eq!(total_iterations(16, 16, 1, 1, 1), 1.0);
        assert_eq!(total_iterations(256, 16, 100, 9, 4), 14400.0);
    }

    #[test]
    fn literal_reading_varies_with_cluster_size() {
        assert_eq!(budget_iterations(1500, 16, 100, 9, 1), 84375.0);
        assert_eq!(budget_iterations(1500, 16, 100, 9, 9), 9375.0);
    }

    #[test]
    fn sampling_single_frame_nfirst() {
        let streams = vec![vec![frame(0, 0, 0.9)]];
        let out = run_sampling_phase(&[nfirst_cfg(1)], &streams, &mut PerfectTeacher).unwrap();
        assert_eq!(out[0].database.len(), 1);
        assert!(out[0].shortfall.is_none());
    }

    #[test]
    fn sampling_shortfall_when_stream_shorter_than_warmup() {
        let mut cfg = nfirst_cfg(3);
        cfg.strategy = Strategy::TopConfidence;
        cfg.warmup = 10;
        let streams = vec![(0..5).map(|t| frame(0, t, 0.5)).collect()];
        let out = run_sampling_phase(&[cfg], &streams, &mut PerfectTeacher).unwrap();
        assert_eq!(out[0].database.len(), 0);
        assert_eq!(
            out[0].shortfall,
            Some(Shortfall {
                budget: 3,
                selected: 0
            })
        );
    }

    #[test]
    fn sampling_fills_all_simulated_streams() {
        let mut world = WorldSpec::planted(9, 3, 0.05, 21);
        world.frames_per_stream = 200;
        world.activity_ramp_frames = 0;
        let streams: Vec<Vec<FrameRecord>> = (0..9).map(|s| generate_stream(&world, s)).collect();
        let cfgs: Vec<SelectConfig> = (0..9).map(|_| nfirst_cfg(16)).collect();
        let mut teacher = SimTeacher::perfect(3);
        let out = run_sampling_phase(&cfgs, &streams, &mut teacher).unwrap();
        assert!(out.iter().all(|o| o.database.len() == 16));
    }

    #[test]
    fn teacher_failures_burn_forwarded_slots() {
        let streams = vec![(0..10).map(|t| frame(0, t, 0.9)).collect()];
        let out =
            run_sampling_phase(&[nfirst_cfg(4)], &streams, &mut FlakyTeacher { calls: 0 }).unwrap();
        assert_eq!(out[0].forwarded, 4);
        assert_eq!(out[0].teacher_failures, 2);
        assert_eq!(out[0].database.len(), 2);
        assert_eq!(
            out[0].shortfall,
            Some(Shortfall {
                budget: 4,
                selected: 2
            })
        );
    }

    fn sim_setup(world: &WorldSpec, budget: usize) -> (Vec<SampleDatabase>, Vec<ValidationSet>) {
        let streams: Vec<Vec<FrameRecord>> = (0..world.n_streams as u32)
            .map(|s| generate_stream(world, s))
            .collect();
        let cfgs: Vec<SelectConfig> = (0..world.n_streams).map(|_| nfirst_cfg(budget)).collect();
        let mut teacher = SimTeacher::perfect(5);
        let out = run_sampling_phase(&cfgs, &streams, &mut teacher).unwrap();
        let dbs: Vec<SampleDatabase> = out.into_iter().map(|o| o.database).collect();
        let vals = streams
            .iter()
            .map(|frames| ValidationSet {
                stream_id: frames[0].stream_id,
                pairs: vec![],
            })
            .collect();
        (dbs, vals)
    }

    #[test]
    fn identical_domains_collapse_to_one_cluster() {
        let mut world = WorldSpec::planted(2, 1, 0.0, 77);
        world.frames_per_stream = 120;
        world.activity_ramp_frames = 0;
        let (dbs, vals) = sim_setup(&world, 8);
        let phase = run_cluster_phase(
            &dbs,
            &vals,
            &mut SimTrainer {
                world: world.clone(),
            },
            &mut SimEvaluator {
                world: world.clone(),
                noise_sigma: 0.0,
            },
            CutRule::Threshold(0.05),
            100,
        )
        .unwrap();
        assert!(phase.distances.get(0, 1) < 1e-6);
        assert_eq!(phase.partition.k, 1);
    }

    #[test]
    fn dissimilar_domains_split() {
        let mut world = WorldSpec::planted(2, 2, 0.0, 78);
        world.frames_per_stream = 120;
        world.activity_ramp_frames = 0;
        let (dbs, vals) = sim_setup(&world, 8);
        let phase = run_cluster_phase(
            &dbs,
            &vals,
            &mut SimTrainer {
                world: world.clone(),
            },
            &mut SimEvaluator {
                world: world.clone(),
                noise_sigma: 0.0,
            },
            CutRule::Threshold(1e-6),
            100,
        )
        .unwrap();
        assert!(phase.distances.get(0, 1) > 1e-4);
        assert_eq!(phase.partition.k, 2);
    }

    #[test]
    fn planted_world_matrix_orders_within_over_cross() {
        let mut world = WorldSpec::planted(6, 3, 0.02, 99);
        world.frames_per_stream = 200;
        world.activity_ramp_frames = 0;
        let (dbs, vals) = sim_setup(&world, 16);
        let phase = run_cluster_phase(
            &dbs,
            &vals,
            &mut SimTrainer {
                world: world.clone(),
            },
            &mut SimEvaluator {
                world: world.clone(),
                noise_sigma: 0.0,
            },
            CutRule::K(3),
            100,
        )
        .unwrap();
        let min_within = (0..6)
            .flat_map(|i| (0..6).map(move |j| (i, j)))
            .filter(|&(i, j)| world.planted_labels[i] == world.planted_labels[j])
            .map(|(i, j)| phase.matrix.get(i, j))
            .fold(f64::INFINITY, f64::min);
        let max_cross = (0..6)
            .flat_map(|i| (0..6).map(move |j| (i, j)))
            .filter(|&(i, j)| world.planted_labels[i] != world.planted_labels[j])
            .map(|(i, j)| phase.matrix.get(i, j))
            .fold(0.0f64, f64::max);
        assert!(
            min_within > max_cross,
            "within {min_within} should exceed cross {max_cross}"
        );
        assert_eq!(phase.partition.assignment, world.planted_labels);
    }

    fn plan_fixture(policy: EpochPolicy) -> (Vec<SampleDatabase>, TrainingParams, WorldSpec) {
        let mut world = WorldSpec::planted(9, 3, 0.05, 31);
        world.frames_per_stream = 400;
        world.activity_ramp_frames = 0;
        let (dbs, _) = sim_setup(&world, 16);
        let params = TrainingParams {
            epochs_k1: 100,
            batch_size: 16,
            policy,
        };
        (dbs, params, world)
    }

    #[test]
    fn degenerate_partitions_train_expected_models() {
        let (dbs, params, world) = plan_fixture(EpochPolicy::Fixed);
        let mut trainer = SimTrainer {
            world: world.clone(),
        };
        let singletons = Partition {
            k: 9,
            assignment: (0..9).collect(),
        };
        let registry = run_training_phase(&singletons, &dbs, &mut trainer, &params).unwrap();
        assert_eq!(registry.len(), 9);
        for (i, db) in dbs.iter().enumerate() {
            let model = registry.model(i).unwrap();
            assert_eq!(
                model.trained_on.iter().copied().collect::<Vec<_>>(),
                vec![db.stream_id()]
            );
        }

        let all_in_one = Partition {
            k: 1,
            assignment: vec![0; 9],
        };
        let registry = run_training_phase(&all_in_one, &dbs, &mut trainer, &params).unwrap();
        assert_eq!(registry.len(), 1);
        assert_eq!(registry.model(0).unwrap().sample_count, 9 * 16);
    }

    #[test]
    fn constant_iterations_plan_matches_k1_cost() {
        let (dbs, params, world) = plan_fixture(EpochPolicy::ConstantIterations);
        let mut trainer = SimTrainer {
            world: world.clone(),
        };
        // three clusters of size 3
        let partition = Partition {
            k: 3,
            assignment: vec![0, 1, 2, 0, 1, 2, 0, 1, 2],
        };
        let registry = run_training_phase(&partition, &dbs, &mut trainer, &params).unwrap();
        for plan in registry.plans() {
            assert_eq!(plan.epochs, 300);
            // 48 samples / batch 16 * 300 epochs
            assert_eq!(plan.iterations, 900.0);
            assert_eq!(plan.iterations, total_iterations(16, 16, 100, 9, 3));
        }
        let k1 = run_training_phase(
            &Partition {
                k: 1,
                assignment: vec![0; 9],
            },
            &dbs,
            &mut trainer,
            &params,
        )
        .unwrap();
        assert_eq!(
            k1.plan(0).unwrap().iterations,
            registry.plan(0).unwrap().iterations
        );
    }

    #[test]
    fn constant_iterations_at_larger_budget() {
        // B = 256, batch 16, 100 epochs at K=1, N = 9: a cluster of size 3
        // trains 300 epochs and lands on 14400 iterations, same as K = 1
        let mut world = WorldSpec::planted(9, 3, 0.05, 77);
        world.frames_per_stream = 300;
        world.activity_ramp_frames = 0;
        let (dbs, _) = sim_setup(&world, 256);
        assert!(dbs.iter().all(|db| db.len() == 256));
        let params = TrainingParams {
            epochs_k1: 100,
            batch_size: 16,
            policy: EpochPolicy::ConstantIterations,
        };
        let mut trainer = SimTrainer { world };
        let partition = Partition {
            k: 3,
            assignment: vec![0, 1, 2, 0, 1, 2, 0, 1, 2],
        };
        let registry = run_training_phase(&partition, &dbs, &mut trainer, &params).unwrap();
        for plan in registry.plans() {
            assert_eq!(plan.epochs, 300);
            assert_eq!(plan.iterations, 14400.0);
        }
        assert_eq!(total_iterations(256, 16, 100, 9, 3), 14400.0);
    }

    #[test]
    fn sample_conservation_across_partitions() {
        let (dbs, params, world) = plan_fixture(EpochPolicy::Fixed);
        let mut trainer = SimTrainer { world };
        let total: usize = dbs.iter().map(|db| db.len()).sum();
        for partition in [
            Partition {
                k: 1,
                assignment: vec![0; 9],
            },
            Partition {
                k: 3,
                assignment: vec![0, 0, 0, 1, 1, 1, 2, 2, 2],
            },
            Partition {
                k: 9,
                assignment: (0..9).collect(),
            },
        ] {
            let registry = run_training_phase(&partition, &dbs, &mut trainer, &params).unwrap();
            let planned: usize = registry.plans().map(|p| p.samples_total).sum();
            assert_eq!(planned, total);
        }
    }

    #[test]
    fn training_is_order_independent() {
        let (dbs, params, world) = plan_fixture(EpochPolicy::Fixed);
        let mut trainer = SimTrainer { world };
        let partition = Partition {
            k: 3,
            assignment: vec![0, 0, 0, 1, 1, 1, 2, 2, 2],
        };
        let forward = run_training_phase(&partition, &dbs, &mut trainer, &params).unwrap();
        // relabel clusters in reverse; members are identical sets
        let relabeled = Partition {
            k: 3,
            assignment: vec![2, 2, 2, 1, 1, 1, 0, 0, 0],
        };
        let reversed = run_training_phase(&relabeled, &dbs, &mut trainer, &params).unwrap();
        assert_eq!(forward.model(0), reversed.model(2));
        assert_eq!(forward.model(2), reversed.model(0));
    }

    #[test]
    fn deploy_maps_streams_to_cluster_models() {
        let (dbs, params, world) = plan_fixture(EpochPolicy::Fixed);
        let mut trainer = SimTrainer { world };
        let partition = Partition {
            k: 2,
            assignment: vec![0, 0, 1, 0, 0, 1, 0, 0, 1],
        };
        let registry = run_training_phase(&partition, &dbs, &mut trainer, &params).unwrap();
        let map = deployment_map(&partition);
        let deployed = deploy(&registry, &map).unwrap();
        assert_eq!(deployed.len(), 9);
        assert_eq!(deployed[2], registry.model(1).unwrap());
        assert_eq!(deployed[0], registry.model(0).unwrap());
        // idempotent
        assert_eq!(deploy(&registry, &map).unwrap(), deployed);
    }

    #[test]
    fn deploy_rejects_missing_cluster() {
        let (dbs, params, world) = plan_fixture(EpochPolicy::Fixed);
        let mut trainer = SimTrainer { world };
        let partition = Partition {
            k: 2,
            assignment: vec![0, 0, 1, 0, 0, 1, 0, 0, 1],
        };
        let registry = run_training_phase(&partition, &dbs, &mut trainer, &params).unwrap();
        let bad_map = deployment_map(&Partition {
            k: 3,
            assignment: vec![0, 0, 1, 0, 0, 1, 0, 0, 2],
        });
        assert_eq!(
            deploy(&registry, &bad_map).unwrap_err(),
            OrchestratorError::Deployment(2)
        );
    }

    #[test]
    fn empty_union_is_rejected() {
        let params = TrainingParams {
            epochs_k1: 10,
            batch_size: 4,
            policy: EpochPolicy::Fixed,
        };
        let dbs = vec![SampleDatabase::new(0, 4)];
        let partition = Partition {
            k: 1,
            assignment: vec![0],
        };
        let mut trainer = SimTrainer {
            world: WorldSpec::planted(1, 1, 0.0, 1),
        };
        assert_eq!(
            run_training_phase(&partition, &dbs, &mut trainer, &params).unwrap_err(),
            OrchestratorError::EmptyCluster(0)
        );
    }

    #[test]
    fn sampling_inputs_must_align() {
        assert!(run_sampling_phase(&[nfirst_cfg(1)], &[], &mut PerfectTeacher).is_err());
    }
}
