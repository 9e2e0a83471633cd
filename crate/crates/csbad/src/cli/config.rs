//! Experiment configuration: a single JSON document with defaults for
//! everything except the fleet size, budget, clustering cut, and seed.
//! Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cli::CliError;
use crate::cluster::CutRule;
use crate::orchestrator::{EpochPolicy, TrainingParams};
use crate::rng::{self, tag};
use crate::select::{SelectConfig, Strategy};
use crate::simworld::{SimTeacher, TransferParams, WorldSpec};

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::Validation {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Scalar shorthand or one value per stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerStream<T> {
    Uniform(T),
    Each(Vec<T>),
}

impl<T: Clone> PerStream<T> {
    fn resolve(&self, n: usize) -> Option<Vec<T>> {
        match self {
            PerStream::Uniform(v) => Some(vec![v.clone(); n]),
            PerStream::Each(vs) => (vs.len() == n).then(|| vs.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    pub n_streams: usize,
    /// Number of planted domain clusters; defaults to `min(3, n_streams)`.
    #[serde(default)]
    pub planted_clusters: Option<usize>,
    /// Within-cluster scatter of domain points (inter-center distance is 1).
    #[serde(default = "defaults::scatter")]
    pub scatter: f64,
    #[serde(default = "defaults::frames_per_stream")]
    pub frames_per_stream: usize,
    /// Expected objects per frame, scalar or per stream.
    #[serde(default = "defaults::activity")]
    pub activity: PerStream<f64>,
    #[serde(default = "defaults::activity_ramp_frames")]
    pub activity_ramp_frames: usize,
    #[serde(default = "defaults::base_confidence")]
    pub base_confidence: f64,
    #[serde(default)]
    pub transfer: TransferParams,
    /// World seed; derived from the master seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Explicit domain coordinates; overrides the planted layout.
    #[serde(default)]
    pub domain_points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub planted_labels: Option<Vec<usize>>,
    /// Dump generated streams as JSON-lines under `<run>/streams/`.
    #[serde(default)]
    pub dump_streams: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectOverride {
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub warmup: Option<usize>,
    #[serde(default)]
    pub bernoulli_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectSection {
    #[serde(default = "defaults::strategy")]
    pub strategy: String,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::warmup")]
    pub warmup: usize,
    #[serde(default = "defaults::bernoulli_b")]
    pub bernoulli_b: f64,
    /// Per-stream overrides keyed by stream id, e.g. a raised alpha for a
    /// data-poor camera.
    #[serde(default)]
    pub overrides: BTreeMap<String, SelectOverride>,
}

impl Default for SelectSection {
    fn default() -> Self {
        SelectSection {
            strategy: defaults::strategy(),
            alpha: defaults::alpha(),
            warmup: defaults::warmup(),
            bernoulli_b: defaults::bernoulli_b(),
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringSection {
    /// "threshold" or "k".
    pub mode: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "defaults::epochs_k1")]
    pub epochs_k1: u32,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: u32,
    /// "fixed" or "constant_iterations".
    #[serde(default = "defaults::epoch_policy")]
    pub epoch_policy: String,
    /// Epochs for the stream-specific models of the clustering step;
    /// defaults to `epochs_k1`.
    #[serde(default)]
    pub step1_epochs: Option<u32>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs_k1: defaults::epochs_k1(),
            batch_size: defaults::batch_size(),
            epoch_policy: defaults::epoch_policy(),
            step1_epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSection {
    #[serde(default = "defaults::capacity")]
    pub capacity: f64,
    #[serde(default)]
    pub jitter_sigma: f64,
    #[serde(default)]
    pub miss_rate0: f64,
    #[serde(default)]
    pub spurious_rate0: f64,
}

impl Default for TeacherSection {
    fn default() -> Self {
        TeacherSection {
            capacity: defaults::capacity(),
            jitter_sigma: 0.0,
            miss_rate0: 0.0,
            spurious_rate0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default = "defaults::z")]
    pub z: f64,
    /// Std-dev of the evaluation noise added to transfer scores.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Tail frames per stream reserved as the validation set.
    #[serde(default = "defaults::validation_frames")]
    pub validation_frames: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            z: defaults::z(),
            noise_sigma: 0.0,
            validation_frames: defaults::validation_frames(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub strategies: Vec<String>,
    pub budgets: Vec<usize>,
    #[serde(default = "defaults::repetitions")]
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldSection,
    #[serde(default)]
    pub select: SelectSection,
    pub budget: usize,
    pub clustering: ClusteringSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub teacher: TeacherSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub master_seed: u64,
    #[serde(default)]
    pub bench: Option<BenchSection>,
}

mod defaults {
    use super::PerStream;

    pub fn scatter() -> f64 {
        0.05
    }
    pub fn frames_per_stream() -> usize {
        2400
    }
    pub fn activity() -> PerStream<f64> {
        PerStream::Uniform(4.0)
    }
    pub fn activity_ramp_frames() -> usize {
        600
    }
    pub fn base_confidence() -> f64 {
        0.8
    }
    pub fn strategy() -> String {
        "top_confidence".to_string()
    }
    pub fn alpha() -> f64 {
        0.1
    }
    pub fn warmup() -> usize {
        720
    }
    pub fn bernoulli_b() -> f64 {
        0.1
    }
    pub fn epochs_k1() -> u32 {
        100
    }
    pub fn batch_size() -> u32 {
        16
    }
    pub fn epoch_policy() -> String {
        "fixed".to_string()
    }
    pub fn capacity() -> f64 {
        1.0
    }
    pub fn z() -> f64 {
        1.96
    }
    pub fn validation_frames() -> usize {
        200
    }
    pub fn repetitions() -> usize {
        6
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let w = &self.world;
        if w.n_streams < 2 {
            return Err(invalid("world.n_streams", "need at least 2 streams"));
        }
        if w.frames_per_stream < 2 {
            return Err(invalid("world.frames_per_stream", "need at least 2 frames"));
        }
        let k_planted = self.planted_clusters();
        if k_planted < 1 || k_planted > w.n_streams {
            return Err(invalid(
                "world.planted_clusters",
                format!("must be in 1..={}", w.n_streams),
            ));
        }
        if !(w.scatter >= 0.0 && w.scatter.is_finite()) {
            return Err(invalid("world.scatter", "must be finite and >= 0"));
        }
        match w.activity.resolve(w.n_streams) {
            None => {
                return Err(invalid(
                    "world.activity",
                    format!("expected a scalar or {} values", w.n_streams),
                ))
            }
            Some(rates) => {
                if rates.iter().any(|&r| !r.is_finite() || r < 0.0) {
                    return Err(invalid("world.activity", "rates must be finite and >= 0"));
                }
            }
        }
        if !(w.base_confidence > 0.0 && w.base_confidence < 1.0) {
            return Err(invalid("world.base_confidence", "must be in (0, 1)"));
        }
        if let Some(points) = &w.domain_points {
            if points.len() != w.n_streams {
                return Err(invalid(
                    "world.domain_points",
                    format!("expected {} points", w.n_streams),
                ));
            }
        }
        if let Some(labels) = &w.planted_labels {
            if labels.len() != w.n_streams {
                return Err(invalid(
                    "world.planted_labels",
                    format!("expected {} labels", w.n_streams),
                ));
            }
        }

        if self.budget < 1 {
            return Err(invalid("budget", "must be >= 1"));
        }

        self.base_select_config(0)?
            .validate()
            .map_err(|e| invalid("select", e.to_string()))?;
        for key in self.select.overrides.keys() {
            let id: u32 = key.parse().map_err(|_| {
                invalid(
                    "select.overrides",
                    format!("key {key:?} is not a stream id"),
                )
            })?;
            if id as usize >= w.n_streams {
                return Err(invalid(
                    "select.overrides",
                    format!("stream {id} out of range 0..{}", w.n_streams),
                ));
            }
        }
        for stream in 0..w.n_streams as u32 {
            self.base_select_config(stream)?
                .validate()
                .map_err(|e| invalid(&format!("select.overrides.{stream}"), e.to_string()))?;
        }

        match self.clustering.mode.as_str() {
            "threshold" => {
                if !(self.clustering.value >= 0.0 && self.clustering.value.is_finite()) {
                    return Err(invalid("clustering.value", "threshold must be >= 0"));
                }
            }
            "k" => {
                let v = self.clustering.value;
                if v.fract() != 0.0 || v < 1.0 || v > w.n_streams as f64 {
                    return Err(invalid(
                        "clustering.value",
                        format!("k must be an integer in 1..={}", w.n_streams),
                    ));
                }
            }
            other => {
                return Err(invalid(
                    "clustering.mode",
                    format!("expected \"threshold\" or \"k\", got {other:?}"),
                ))
            }
        }

        let t = &self.training;
        if t.epochs_k1 < 1 {
            return Err(invalid("training.epochs_k1", "must be >= 1"));
        }
        if t.batch_size < 1 {
            return Err(invalid("training.batch_size", "must be >= 1"));
        }
        if let Some(s1) = t.step1_epochs {
            if s1 < 1 {
                return Err(invalid("training.step1_epochs", "must be >= 1"));
            }
        }
        if !matches!(t.epoch_policy.as_str(), "fixed" | "constant_iterations") {
            return Err(invalid(
                "training.epoch_policy",
                format!(
                    "expected \"fixed\" or \"constant_iterations\", got {:?}",
                    t.epoch_policy
                ),
            ));
        }

        self.sim_teacher(self.master_seed)
            .validate()
            .map_err(|e| invalid("teacher", e.to_string()))?;

        let e = &self.evaluation;
        if !(e.z > 0.0 && e.z.is_finite()) {
            return Err(invalid("evaluation.z", "must be > 0"));
        }
        if !(e.noise_sigma >= 0.0 && e.noise_sigma.is_finite()) {
            return Err(invalid("evaluation.noise_sigma", "must be >= 0"));
        }
        if e.validation_frames < 1 || e.validation_frames >= w.frames_per_stream {
            return Err(invalid(
                "evaluation.validation_frames",
                format!("must be in 1..{}", w.frames_per_stream),
            ));
        }

        if let Some(bench) = &self.bench {
            if bench.strategies.is_empty() {
                return Err(invalid("bench.strategies", "list at least one strategy"));
            }
            for s in &bench.strategies {
                Strategy::from_str(s).map_err(|e| invalid("bench.strategies", e.to_string()))?;
            }
            if bench.budgets.is_empty() || bench.budgets.iter().any(|&b| b < 1) {
                return Err(invalid("bench.budgets", "list at least one budget >= 1"));
            }
            if bench.repetitions < 1 {
                return Err(invalid("bench.repetitions", "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn planted_clusters(&self) -> usize {
        self.world
            .planted_clusters
            .unwrap_or_else(|| self.world.n_streams.min(3))
    }

    fn world_seed(&self, master_seed: u64) -> u64 {
        self.world
            .seed
            .unwrap_or_else(|| rng::mix(master_seed, &[tag::WORLD]))
    }

    /// Realize the world this configuration describes.
    pub fn world_spec(&self, master_seed: u64) -> WorldSpec {
        let w = &self.world;
        let seed = self.world_seed(master_seed);
        let mut spec = WorldSpec::planted(w.n_streams, self.planted_clusters(), w.scatter, seed);
        if let Some(points) = &w.domain_points {
            spec.domain_points = points.clone();
        }
        if let Some(labels) = &w.planted_labels {
            spec.planted_labels = labels.clone();
        }
        spec.frames_per_stream = w.frames_per_stream;
        spec.activity = w.activity.resolve(w.n_streams).expect("validated activity");
        spec.activity_ramp_frames = w.activity_ramp_frames;
        spec.base_confidence = w.base_confidence;
        spec.transfer = w.transfer;
        spec
    }

    fn base_select_config(&self, stream: u32) -> Result<SelectConfig, CliError> {
        let s = &self.select;
        let ov = self.select.overrides.get(&stream.to_string());
        let strategy_name = ov
            .and_then(|o| o.strategy.as_deref())
            .unwrap_or(&s.strategy);
        let strategy = Strategy::from_str(strategy_name)
            .map_err(|e| invalid("select.strategy", e.to_string()))?;
        Ok(SelectConfig {
            strategy,
            alpha: ov.and_then(|o| o.alpha).unwrap_or(s.alpha),
            warmup: ov.and_then(|o| o.warmup).unwrap_or(s.warmup),
            budget: self.budget,
            bernoulli_b: ov.and_then(|o| o.bernoulli_b).unwrap_or(s.bernoulli_b),
            rng_seed: 0,
        })
    }

    /// One selector configuration per stream, with per-stream seeds derived
    /// from the master seed.
    pub fn select_configs(&self, master_seed: u64) -> Result<Vec<SelectConfig>, CliError> {
        (0..self.world.n_streams as u32)
            .map(|stream| {
                let mut cfg = self.base_select_config(stream)?;
                cfg.rng_seed = rng::mix(master_seed, &[tag::SELECT, stream as u64]);
                Ok(cfg)
            })
            .collect()
    }

    pub fn sim_teacher(&self, master_seed: u64) -> SimTeacher {
        SimTeacher {
            capacity: self.teacher.capacity,
            jitter_sigma: self.teacher.jitter_sigma,
            miss_rate0: self.teacher.miss_rate0,
            spurious_rate0: self.teacher.spurious_rate0,
            seed: rng::mix(master_seed, &[tag::TEACH]),
        }
    }

    pub fn cut_rule(&self) -> CutRule {
        match self.clustering.mode.as_str() {
            "threshold" => CutRule::Threshold(self.clustering.value),
            _ => CutRule::K(self.clustering.value as usize),
        }
    }

    pub fn training_params(&self) -> TrainingParams {
        TrainingParams {
            epochs_k1: self.training.epochs_k1,
            batch_size: self.training.batch_size,
            policy: match self.training.epoch_policy.as_str() {
                "constant_iterations" => EpochPolicy::ConstantIterations,
                _ => EpochPolicy::Fixed,
            },
        }
    }

    pub fn step1_epochs(&self) -> u32 {
        self.training
            .step1_epochs
            .unwrap_or(self.training.epochs_k1)
    }

    /// The configuration echoed into a run directory: every derived value
    /// pinned, so re-running the echo reproduces the run byte for byte.
    pub fn resolved(&self, master_seed: u64, world: &WorldSpec, output_dir: PathBuf) -> Self {
        let mut echo = self.clone();
        echo.master_seed = master_seed;
        echo.output_dir = Some(output_dir);
        echo.world.seed = Some(world.seed);
        echo.world.planted_clusters = Some(self.planted_clusters());
        echo.world.domain_points = Some(world.domain_points.clone());
        echo.world.planted_labels = Some(world.planted_labels.clone());
        echo.world.activity = PerStream::Each(world.activity.clone());
        echo
    }
}
