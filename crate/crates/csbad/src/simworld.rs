//! Synthetic multi-camera world replacing real video and real DNN training:
//! planted domain clusters, stochastic frame/detection streams, a
//! parameterized teacher-noise model, and an analytic transfer-performance
//! trainer.
//!
//! Every functional form in this module is an engineered stand-in, kept in
//! one place so tests can pin the formulas:
//!
//! * Objects arrive per frame as `Poisson(activity)`, optionally damped by a
//!   ramp over the first frames of a stream (young streams see little
//!   action, which is what makes take-the-first-frames selection weak).
//! * A box's *visibility* grows with its area; the on-node model's
//!   confidence for a box is Beta-distributed around
//!   `visibility * base_confidence`, and the teacher's per-box miss
//!   probability is `miss_rate0 + (1 - capacity) * (1 - visibility)`. Hard
//!   frames therefore get both low scores and noisy labels.
//! * A trained model's quality on a stream is
//!   `p0 + g(n) * label_quality * (1 - beta * d_min) + noise`, with
//!   `g(n) = g_max * (1 - exp(-n / tau))` and `d_min` the Euclidean distance
//!   from the evaluation stream's domain point to the nearest training
//!   stream's point.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{
    BoundingBox, Detection, FrameRecord, PseudoLabelSet, SampleDatabase, ValidationSet,
};
use crate::metrics::{match_detections, EvalPair};
use crate::orchestrator::{ModelEvaluator, PseudoLabeler, StudentTrainer};
use crate::rng::{self, tag};
use crate::util::clamp01;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("frame ({stream_id}, {t}) carries no ground truth")]
    MissingGroundTruth { stream_id: u32, t: u64 },
    #[error("cannot train on an empty sample union")]
    EmptyCluster,
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

/// Constants of the analytic transfer-performance formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferParams {
    pub p0: f64,
    pub g_max: f64,
    pub beta: f64,
    pub tau: f64,
}

impl Default for TransferParams {
    fn default() -> Self {
        TransferParams {
            p0: 0.35,
            g_max: 0.25,
            beta: 1.0,
            tau: 400.0,
        }
    }
}

/// Description of the synthetic fleet: latent domain coordinates per stream,
/// planted cluster labels, and stream generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub n_streams: usize,
    /// Latent domain coordinates, one vector per stream.
    pub domain_points: Vec<Vec<f64>>,
    pub planted_labels: Vec<usize>,
    pub frames_per_stream: usize,
    /// Per-stream expected objects per frame.
    pub activity: Vec<f64>,
    /// Frames over which activity ramps linearly from ~0 up to its nominal
    /// rate; 0 disables the ramp.
    pub activity_ramp_frames: usize,
    /// Domain-match factor of the scoring model: mean on-node confidence for
    /// a fully visible box. Must lie in (0, 1).
    pub base_confidence: f64,
    pub transfer: TransferParams,
    pub seed: u64,
}

impl WorldSpec {
    /// A world with `k_clusters` planted clusters: cluster centers sit at
    /// unit pairwise distance, streams are assigned round-robin, and each
    /// stream's domain point scatters `N(0, scatter^2)` around its center.
    pub fn planted(n_streams: usize, k_clusters: usize, scatter: f64, seed: u64) -> Self {
        assert!(n_streams >= 1 && k_clusters >= 1 && k_clusters <= n_streams);
        let mut layout_rng = rng::derive_rng(seed, &[tag::WORLD]);
        let scale = 1.0 / 2.0f64.sqrt();
        let planted_labels: Vec<usize> = (0..n_streams).map(|i| i % k_clusters).collect();
        let noise = Normal::new(0.0, scatter.max(0.0)).expect("finite scatter");
        let domain_points = planted_labels
            .iter()
            .map(|&label| {
                (0..k_clusters)
                    .map(|dim| {
                        let center = if dim == label { scale } else { 0.0 };
                        center
                            + if scatter > 0.0 {
                                noise.sample(&mut layout_rng)
                            } else {
                                0.0
                            }
                    })
                    .collect()
            })
            .collect();
        WorldSpec {
            n_streams,
            domain_points,
            planted_labels,
            frames_per_stream: 2400,
            activity: vec![4.0; n_streams],
            activity_ramp_frames: 600,
            base_confidence: 0.8,
            transfer: TransferParams::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::InvalidWorld(msg));
        if self.n_streams < 1 {
            return fail("n_streams must be >= 1".into());
        }
        if self.domain_points.len() != self.n_streams {
            return fail(format!(
                "{} domain points for {} streams",
                self.domain_points.len(),
                self.n_streams
            ));
        }
        let dim = self.domain_points[0].len();
        if self
            .domain_points
            .iter()
            .any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite()))
        {
            return fail("domain points must share one finite dimensionality".into());
        }
        if self.planted_labels.len() != self.n_streams {
            return fail("one planted label per stream required".into());
        }
        if self.activity.len() != self.n_streams {
            return fail("one activity rate per stream required".into());
        }
        if self.activity.iter().any(|&a| !a.is_finite() || a < 0.0) {
            return fail("activity rates must be finite and >= 0".into());
        }
        if self.frames_per_stream < 1 {
            return fail("frames_per_stream must be >= 1".into());
        }
        if !(self.base_confidence > 0.0 && self.base_confidence < 1.0) {
            return fail(format!(
                "base_confidence must be in (0, 1), got {}",
                self.base_confidence
            ));
        }
        let t = &self.transfer;
        if !(0.0..=1.0).contains(&t.p0)
            || t.g_max < 0.0
            || t.beta < 0.0
            || t.tau.is_nan()
            || t.tau <= 0.0
        {
            return fail("transfer parameters out of range".into());
        }
        Ok(())
    }

    pub fn domain_distance(&self, a: u32, b: u32) -> f64 {
        self.domain_points[a as usize]
            .iter()
            .zip(&self.domain_points[b as usize])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// How clearly an object of this size reads in a frame, in [0.25, 1].
pub fn visibility(bbox: &BoundingBox) -> f64 {
    const FULL_VISIBILITY_AREA: f64 = 0.04;
    0.25 + 0.75 * (bbox.area() / FULL_VISIBILITY_AREA).min(1.0)
}

const BOX_SIDE_MIN: f64 = 0.05;
const BOX_SIDE_MAX: f64 = 0.3;
const MAX_BOXES_PER_FRAME: usize = 64;

fn sample_box<R: Rng>(rng: &mut R) -> BoundingBox {
    let w = rng.gen_range(BOX_SIDE_MIN..BOX_SIDE_MAX);
    let h = rng.gen_range(BOX_SIDE_MIN..BOX_SIDE_MAX);
    let x0 = rng.gen_range(0.0..(1.0 - w));
    let y0 = rng.gen_range(0.0..(1.0 - h));
    BoundingBox {
        x_min: x0,
        y_min: y0,
        x_max: x0 + w,
        y_max: y0 + h,
    }
}

/// Generate one stream's full frame sequence. Deterministic in
/// `(spec.seed, stream_id)`; ground truth carries confidence 1.0 and the
/// detection list holds the scoring model's inference with Beta-distributed
/// confidences.
pub fn generate_stream(spec: &WorldSpec, stream_id: u32) -> Vec<FrameRecord> {
    assert!((stream_id as usize) < spec.n_streams, "unknown stream");
    let mut stream_rng = rng::derive_rng(spec.seed, &[tag::STREAM, stream_id as u64]);
    let lambda_base = spec.activity[stream_id as usize];
    let mut frames = Vec::with_capacity(spec.frames_per_stream);
    for t in 0..spec.frames_per_stream as u64 {
        let ramp = if spec.activity_ramp_frames > 0 && (t as usize) < spec.activity_ramp_frames {
            (t + 1) as f64 / spec.activity_ramp_frames as f64
        } else {
            1.0
        };
        let lambda = lambda_base * ramp;
        let count = if lambda > 0.0 {
            let drawn = Poisson::new(lambda)
                .expect("positive rate")
                .sample(&mut stream_rng);
            (drawn as usize).min(MAX_BOXES_PER_FRAME)
        } else {
            0
        };
        let mut ground_truth = Vec::with_capacity(count);
        let mut detections = Vec::with_capacity(count);
        for _ in 0..count {
            let bbox = sample_box(&mut stream_rng);
            ground_truth.push(Detection {
                bbox,
                confidence: 1.0,
                label: 0,
            });
            let mean = (visibility(&bbox) * spec.base_confidence).clamp(0.02, 0.98);
            let concentration = 10.0;
            let beta = Beta::new(mean * concentration, (1.0 - mean) * concentration)
                .expect("valid beta parameters");
            detections.push(Detection {
                bbox,
                confidence: clamp01(beta.sample(&mut stream_rng)),
                label: 0,
            });
        }
        frames.push(FrameRecord {
            stream_id,
            t,
            detections,
            ground_truth: Some(ground_truth),
        });
    }
    frames
}

/// The imperfect pseudo-labeling teacher. `capacity` 1 with zero jitter and
/// zero base rates reproduces ground truth exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimTeacher {
    /// Overall competence in (0, 1]; 1 is a perfect teacher.
    pub capacity: f64,
    /// Std-dev of the Gaussian corner jitter applied to surviving boxes.
    pub jitter_sigma: f64,
    /// Baseline per-box miss probability added on top of the
    /// capacity/visibility term.
    pub miss_rate0: f64,
    /// Spurious-box rate of a zero-capacity teacher; the realized rate is
    /// `spurious_rate0 * (1 - capacity)` per frame.
    pub spurious_rate0: f64,
    pub seed: u64,
}

impl SimTeacher {
    pub fn perfect(seed: u64) -> Self {
        SimTeacher {
            capacity: 1.0,
            jitter_sigma: 0.0,
            miss_rate0: 0.0,
            spurious_rate0: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.capacity > 0.0 && self.capacity <= 1.0) {
            return Err(SimError::InvalidWorld(format!(
                "teacher capacity must be in (0, 1], got {}",
                self.capacity
            )));
        }
        if self.jitter_sigma < 0.0 || !self.jitter_sigma.is_finite() {
            return Err(SimError::InvalidWorld("jitter_sigma must be >= 0".into()));
        }
        for (name, v) in [
            ("miss_rate0", self.miss_rate0),
            ("spurious_rate0", self.spurious_rate0),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(SimError::InvalidWorld(format!(
                    "{name} must be in [0, 1), got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-box drop probability: `miss_rate0 + (1 - capacity) * (1 - visibility)`,
/// clamped to [0, 1]. Ambiguous (low-visibility) boxes suffer most from a
/// weak teacher.
pub fn miss_probability(teacher: &SimTeacher, visibility: f64) -> f64 {
    clamp01(teacher.miss_rate0 + (1.0 - teacher.capacity) * (1.0 - visibility))
}

fn jitter_box<R: Rng>(bbox: &BoundingBox, sigma: f64, rng: &mut R) -> BoundingBox {
    if sigma <= 0.0 {
        return *bbox;
    }
    const MIN_SIDE: f64 = 1e-3;
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let mut draws = [0.0; 4];
    for d in &mut draws {
        *d = noise.sample(rng);
    }
    let (mut x0, mut x1) = (bbox.x_min + draws[0], bbox.x_max + draws[1]);
    let (mut y0, mut y1) = (bbox.y_min + draws[2], bbox.y_max + draws[3]);
    if x0 > x1 {
        std::mem::swap(&mut x0, &mut x1);
    }
    if y0 > y1 {
        std::mem::swap(&mut y0, &mut y1);
    }
    let x0 = x0.clamp(0.0, 1.0 - MIN_SIDE);
    let y0 = y0.clamp(0.0, 1.0 - MIN_SIDE);
    BoundingBox {
        x_min: x0,
        y_min: y0,
        x_max: x1.clamp(x0 + MIN_SIDE, 1.0),
        y_max: y1.clamp(y0 + MIN_SIDE, 1.0),
    }
}

/// Pseudo-label one frame: each ground-truth box is independently dropped
/// with its miss probability, survivors are jittered, and spurious boxes are
/// added at the teacher's spurious rate. Deterministic per
/// `(teacher.seed, stream, t)` and independent of labeling order.
pub fn teacher_label(
    teacher: &SimTeacher,
    frame: &FrameRecord,
) -> Result<PseudoLabelSet, SimError> {
    let ground_truth = frame
        .ground_truth
        .as_ref()
        .ok_or(SimError::MissingGroundTruth {
            stream_id: frame.stream_id,
            t: frame.t,
        })?;

    let mut boxes = Vec::with_capacity(ground_truth.len());
    for (idx, gt) in ground_truth.iter().enumerate() {
        // one sub-generator per box so draws never shift between boxes
        let mut box_rng = rng::derive_rng(
            teacher.seed,
            &[tag::TEACH, frame.stream_id as u64, frame.t, idx as u64],
        );
        let miss_p = miss_probability(teacher, visibility(&gt.bbox));
        if box_rng.gen::<f64>() < miss_p {
            continue;
        }
        boxes.push(Detection {
            bbox: jitter_box(&gt.bbox, teacher.jitter_sigma, &mut box_rng),
            confidence: clamp01(1.0 - miss_p),
            label: gt.label,
        });
    }

    let spurious_rate = teacher.spurious_rate0 * (1.0 - teacher.capacity);
    if spurious_rate > 0.0 {
        let mut spur_rng = rng::derive_rng(
            teacher.seed,
            &[tag::TEACH, frame.stream_id as u64, frame.t, u64::MAX],
        );
        let count = Poisson::new(spurious_rate)
            .expect("positive rate")
            .sample(&mut spur_rng) as usize;
        for _ in 0..count.min(MAX_BOXES_PER_FRAME) {
            let bbox = sample_box(&mut spur_rng);
            boxes.push(Detection {
                bbox,
                confidence: spur_rng.gen_range(0.05..0.5),
                label: 0,
            });
        }
    }
    Ok(PseudoLabelSet { boxes })
}

/// Teacher fidelity for one frame in [0, 1]: matched boxes lose their IoU
/// residual, misses and spurious boxes each cost one full object, and a
/// frame with no ground truth teaches nothing (fidelity 0).
pub fn frame_fidelity(ground_truth: &[Detection], labels: &PseudoLabelSet) -> f64 {
    if ground_truth.is_empty() {
        return 0.0;
    }
    let pair = EvalPair {
        predictions: labels.boxes.clone(),
        ground_truth: ground_truth.to_vec(),
    };
    let outcomes = match_detections(&pair, 0.1);
    let matched = outcomes.iter().filter(|o| o.matched()).count();
    let residual: f64 = outcomes
        .iter()
        .filter(|o| o.matched())
        .map(|o| 1.0 - o.iou)
        .sum();
    let missed = ground_truth.len() - matched;
    let spurious = labels.boxes.len() - matched;
    let error_mass = missed as f64 + spurious as f64 + residual;
    clamp01(1.0 - error_mass / ground_truth.len() as f64)
}

/// Mean per-frame teacher fidelity over a database's samples, regenerating
/// the stream to recover ground truth.
pub fn database_label_quality(spec: &WorldSpec, db: &SampleDatabase) -> f64 {
    let (sum, count) = fidelity_sum(spec, db);
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn fidelity_sum(spec: &WorldSpec, db: &SampleDatabase) -> (f64, usize) {
    if db.is_empty() {
        return (0.0, 0);
    }
    let frames = generate_stream(spec, db.stream_id());
    let sum = db
        .samples()
        .iter()
        .map(|s| {
            let frame = &frames[s.frame_ref.t as usize];
            let gt = frame.ground_truth.as_deref().unwrap_or(&[]);
            frame_fidelity(gt, &s.labels)
        })
        .sum();
    (sum, db.len())
}

/// Sample-weighted label quality of a union of databases.
pub fn union_label_quality(spec: &WorldSpec, members: &[&SampleDatabase]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0;
    for db in members {
        let (s, c) = fidelity_sum(spec, db);
        sum += s;
        count += c;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Analytic stand-in for a trained student: which streams fed it, how many
/// samples it saw, and how faithful those samples' labels were. Immutable
/// once trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudentModel {
    pub trained_on: BTreeSet<u32>,
    pub sample_count: usize,
    pub label_quality: f64,
    pub quality_seed: u64,
}

/// Train a student on the union of the member databases. Fresh start every
/// time: the result depends only on the spec and the samples.
pub fn sim_train(
    spec: &WorldSpec,
    members: &[&SampleDatabase],
) -> Result<SimStudentModel, SimError> {
    let sample_count: usize = members.iter().map(|db| db.len()).sum();
    if sample_count == 0 {
        return Err(SimError::EmptyCluster);
    }
    let trained_on: BTreeSet<u32> = members.iter().map(|db| db.stream_id()).collect();
    let mut parts: Vec<u64> = vec![tag::TRAIN];
    parts.extend(trained_on.iter().map(|&s| s as u64));
    parts.push(sample_count as u64);
    Ok(SimStudentModel {
        label_quality: union_label_quality(spec, members),
        trained_on,
        sample_count,
        quality_seed: rng::mix(spec.seed, &parts),
    })
}

/// Transfer performance of a model on a stream:
/// `clamp01(p0 + g(n) * label_quality * (1 - beta * d_min) + eps)` with
/// `eps ~ N(0, noise_sigma^2)` drawn reproducibly per (model, stream).
pub fn transfer_perf(
    model: &SimStudentModel,
    eval_stream: u32,
    spec: &WorldSpec,
    label_quality: f64,
    noise_sigma: f64,
) -> f64 {
    let d_min = model
        .trained_on
        .iter()
        .map(|&s| spec.domain_distance(s, eval_stream))
        .fold(f64::INFINITY, f64::min);
    let t = &spec.transfer;
    let gain = t.g_max * (1.0 - (-(model.sample_count as f64) / t.tau).exp());
    let eps = if noise_sigma > 0.0 {
        let mut rng = rng::derive_rng(
            spec.seed,
            &[tag::EVAL, model.quality_seed, eval_stream as u64],
        );
        Normal::new(0.0, noise_sigma)
            .expect("finite sigma")
            .sample(&mut rng)
    } else {
        0.0
    };
    clamp01(t.p0 + gain * label_quality * (1.0 - t.beta * d_min) + eps)
}

/// [`PseudoLabeler`] backed by the teacher-noise model.
impl PseudoLabeler for SimTeacher {
    fn label(&mut self, frame: &FrameRecord) -> Result<PseudoLabelSet, String> {
        teacher_label(self, frame).map_err(|e| e.to_string())
    }
}

/// [`StudentTrainer`] backed by [`sim_train`]. Epoch counts affect only the
/// cost accounting, not the analytic model quality.
#[derive(Debug, Clone)]
pub struct SimTrainer {
    pub world: WorldSpec,
}

impl StudentTrainer for SimTrainer {
    type Model = SimStudentModel;

    fn train(
        &mut self,
        members: &[&SampleDatabase],
        _epochs: u32,
    ) -> Result<SimStudentModel, String> {
        sim_train(&self.world, members).map_err(|e| e.to_string())
    }
}

/// [`ModelEvaluator`] backed by [`transfer_perf`].
#[derive(Debug, Clone)]
pub struct SimEvaluator {
    pub world: WorldSpec,
    pub noise_sigma: f64,
}

impl ModelEvaluator<SimStudentModel> for SimEvaluator {
    fn evaluate(
        &mut self,
        model: &SimStudentModel,
        validation: &ValidationSet,
    ) -> Result<f64, String> {
        Ok(transfer_perf(
            model,
            validation.stream_id,
            &self.world,
            model.label_quality,
            self.noise_sigma,
        ))
    }
}
