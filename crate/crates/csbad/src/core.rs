//! Domain types shared by all modules: boxes, detections, frames, per-stream
//! sample databases, and budgets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CoreError {
    #[error("degenerate bounding box: ({x_min}, {y_min}, {x_max}, {y_max}) has non-positive extent or non-finite coordinates")]
    DegenerateBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("sample budget of {budget} exhausted for stream {stream_id}")]
    BudgetExceeded { stream_id: u32, budget: usize },
    #[error("frame {frame_ref:?} already present in database for stream {stream_id}")]
    DuplicateSample { stream_id: u32, frame_ref: FrameRef },
}

/// Axis-aligned box in corner representation. Units are caller-defined
/// (pixels or normalized) but must be consistent within a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, CoreError> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(CoreError::DegenerateBox {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        }
    }

    /// True when all coordinates are finite and both extents are positive.
    pub fn is_valid(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Intersection over union of two boxes. Symmetric, 0 when disjoint, 1 for
/// identical boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64, CoreError> {
    for bx in [a, b] {
        if !bx.is_valid() {
            return Err(CoreError::DegenerateBox {
                x_min: bx.x_min,
                y_min: bx.y_min,
                x_max: bx.x_max,
                y_max: bx.y_max,
            });
        }
    }
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    Ok(inter / union)
}

/// One detected (or annotated) object: a box, a confidence in [0, 1], and an
/// integer class id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub label: u32,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64, label: u32) -> Result<Self, CoreError> {
        if !(0.0..=1.0).contains(&confidence) || !confidence.is_finite() {
            return Err(CoreError::InvalidConfidence(confidence));
        }
        Ok(Detection {
            bbox,
            confidence,
            label,
        })
    }
}

/// Identity of a frame within the fleet: `(stream_id, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub stream_id: u32,
    pub t: u64,
}

/// One observed frame: the on-node model's detections plus, in simulation,
/// the ground-truth objects (confidence forced to 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub stream_id: u32,
    pub t: u64,
    pub detections: Vec<Detection>,
    pub ground_truth: Option<Vec<Detection>>,
}

impl FrameRecord {
    pub fn frame_ref(&self) -> FrameRef {
        FrameRef {
            stream_id: self.stream_id,
            t: self.t,
        }
    }
}

/// Frame confidence score: the maximum detection confidence, or 0.0 for a
/// frame with no detections (empty frames never look confident, so
/// threshold-based selection naturally rejects them).
pub fn frame_confidence_score(frame: &FrameRecord) -> f64 {
    frame
        .detections
        .iter()
        .map(|d| d.confidence)
        .fold(0.0, f64::max)
}

/// Teacher output for one frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub boxes: Vec<Detection>,
}

/// One stored training sample: a frame reference and its pseudo-labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub frame_ref: FrameRef,
    pub labels: PseudoLabelSet,
}

/// Per-stream collection of selected samples, capped at `budget` entries.
/// Insertion is the only mutation; the cap and frame-ref uniqueness hold
/// after every call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDatabase {
    stream_id: u32,
    budget: usize,
    samples: Vec<Sample>,
}

impl SampleDatabase {
    pub fn new(stream_id: u32, budget: usize) -> Self {
        assert!(budget >= 1, "budget must be at least 1");
        SampleDatabase {
            stream_id,
            budget,
            samples: Vec::new(),
        }
    }

    pub fn stream_id(&self) -> u32 {
        self.stream_id
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() >= self.budget
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn insert(&mut self, frame_ref: FrameRef, labels: PseudoLabelSet) -> Result<(), CoreError> {
        if self.is_full() {
            return Err(CoreError::BudgetExceeded {
                stream_id: self.stream_id,
                budget: self.budget,
            });
        }
        if self.samples.iter().any(|s| s.frame_ref == frame_ref) {
            return Err(CoreError::DuplicateSample {
                stream_id: self.stream_id,
                frame_ref,
            });
        }
        self.samples.push(Sample { frame_ref, labels });
        debug_assert!(self.samples.len() <= self.budget);
        Ok(())
    }
}

/// Held-out pseudo-labeled pairs for one stream, disjoint (by frame ref)
/// from the same stream's sample database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSet {
    pub stream_id: u32,
    pub pairs: Vec<Sample>,
}

impl ValidationSet {
    /// Check the disjointness invariant against a sample database.
    pub fn is_disjoint_from(&self, db: &SampleDatabase) -> bool {
        if db.stream_id() != self.stream_id {
            return true;
        }
        self.pairs
            .iter()
            .all(|p| db.samples().iter().all(|s| s.frame_ref != p.frame_ref))
    }
}

/// Optional many-to-one class-id remapping (e.g. collapsing vehicle-like
/// classes into one group). Ids without an entry map to themselves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    map: BTreeMap<u32, u32>,
}

impl LabelMap {
    pub fn identity() -> Self {
        LabelMap::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        LabelMap {
            map: pairs.into_iter().collect(),
        }
    }

    /// Map every listed class id onto a single group id.
    pub fn collapse(ids: impl IntoIterator<Item = u32>, group: u32) -> Self {
        LabelMap {
            map: ids.into_iter().map(|id| (id, group)).collect(),
        }
    }

    pub fn apply(&self, label: u32) -> u32 {
        *self.map.get(&label).unwrap_or(&label)
    }

    pub fn apply_all(&self, detections: &[Detection]) -> Vec<Detection> {
        detections
            .iter()
            .map(|d| Detection {
                label: self.apply(d.label),
                ..*d
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(conf: f64) -> Detection {
        Detection::new(bbox(0.0, 0.0, 1.0, 1.0), conf, 0).unwrap()
    }

    #[test]
    fn iou_identical_boxes() {
        let a = bbox(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn iou_disjoint_boxes() {
        let a = bbox(0.0, 0.0, 1.0, 1.0);
        let b = bbox(2.0, 2.0, 3.0, 3.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_partial_overlap_is_one_third() {
        // inter = 2, union = 6
        let a = bbox(0.0, 0.0, 2.0, 2.0);
        let b = bbox(1.0, 0.0, 3.0, 2.0);
        let v = iou(&a, &b).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn iou_rejects_degenerate_box() {
        let a = bbox(0.0, 0.0, 1.0, 1.0);
        let zero_area = BoundingBox {
            x_min: 0.0,
            y_min: 0.0,
            x_max: 0.0,
            y_max: 1.0,
        };
        assert!(matches!(
            iou(&a, &zero_area),
            Err(CoreError::DegenerateBox { .. })
        ));
    }

    #[test]
    fn frame_score_is_max_confidence() {
        let f = FrameRecord {
            stream_id: 0,
            t: 0,
            detections: vec![det(0.3), det(0.7)],
            ground_truth: None,
        };
        assert_eq!(frame_confidence_score(&f), 0.7);
    }

    #[test]
    fn frame_score_empty_is_zero() {
        let f = FrameRecord {
            stream_id: 0,
            t: 0,
            detections: vec![],
            ground_truth: None,
        };
        assert_eq!(frame_confidence_score(&f), 0.0);
    }

    #[test]
    fn frame_score_singleton() {
        let f = FrameRecord {
            stream_id: 0,
            t: 0,
            detections: vec![det(0.5)],
            ground_truth: None,
        };
        assert_eq!(frame_confidence_score(&f), 0.5);
    }

    #[test]
    fn database_insert_grows_until_budget() {
        let mut db = SampleDatabase::new(0, 2);
        db.insert(FrameRef { stream_id: 0, t: 0 }, PseudoLabelSet::default())
            .unwrap();
        assert_eq!(db.len(), 1);
        db.insert(FrameRef { stream_id: 0, t: 1 }, PseudoLabelSet::default())
            .unwrap();
        assert!(db.is_full());
        let err = db
            .insert(FrameRef { stream_id: 0, t: 2 }, PseudoLabelSet::default())
            .unwrap_err();
        assert!(matches!(err, CoreError::BudgetExceeded { budget: 2, .. }));
    }

    #[test]
    fn database_rejects_duplicate_frame_ref() {
        let mut db = SampleDatabase::new(0, 4);
        let fr = FrameRef { stream_id: 0, t: 7 };
        db.insert(fr, PseudoLabelSet::default()).unwrap();
        let err = db.insert(fr, PseudoLabelSet::default()).unwrap_err();
        assert!(matches!(err, CoreError::DuplicateSample { .. }));
    }

    #[test]
    fn detection_confidence_range_checked() {
        assert!(Detection::new(bbox(0.0, 0.0, 1.0, 1.0), 1.2, 0).is_err());
        assert!(Detection::new(bbox(0.0, 0.0, 1.0, 1.0), -0.1, 0).is_err());
    }

    #[test]
    fn validation_set_disjointness_check() {
        let mut db = SampleDatabase::new(0, 4);
        db.insert(FrameRef { stream_id: 0, t: 3 }, PseudoLabelSet::default())
            .unwrap();
        let clean = ValidationSet {
            stream_id: 0,
            pairs: vec![Sample {
                frame_ref: FrameRef { stream_id: 0, t: 9 },
                labels: PseudoLabelSet::default(),
            }],
        };
        assert!(clean.is_disjoint_from(&db));
        let overlapping = ValidationSet {
            stream_id: 0,
            pairs: vec![Sample {
                frame_ref: FrameRef { stream_id: 0, t: 3 },
                labels: PseudoLabelSet::default(),
            }],
        };
        assert!(!overlapping.is_disjoint_from(&db));
        // a different stream's database can never collide
        let other_stream = SampleDatabase::new(1, 4);
        assert!(overlapping.is_disjoint_from(&other_stream));
    }

    #[test]
    fn label_map_identity_and_collapse() {
        let id = LabelMap::identity();
        assert_eq!(id.apply(5), 5);
        let vehicles = LabelMap::collapse([1, 2, 3, 5, 7], 1);
        assert_eq!(vehicles.apply(7), 1);
        assert_eq!(vehicles.apply(4), 4);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..10.0f64, 0.0..10.0f64, 0.01..5.0f64, 0.01..5.0f64)
            .prop_map(|(x, y, w, h)| bbox(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b).unwrap();
            let ba = iou(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
            prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn frame_score_matches_brute_force(confs in proptest::collection::vec(0.0..=1.0f64, 0..12)) {
            let frame = FrameRecord {
                stream_id: 0,
                t: 0,
                detections: confs.iter().map(|&c| det(c)).collect(),
                ground_truth: None,
            };
            let brute = confs.iter().cloned().fold(0.0f64, f64::max);
            prop_assert_eq!(frame_confidence_score(&frame), brute);
        }

        #[test]
        fn database_never_exceeds_budget(budget in 1usize..8, attempts in 1u64..40) {
            let mut db = SampleDatabase::new(0, budget);
            for t in 0..attempts {
                let _ = db.insert(FrameRef { stream_id: 0, t }, PseudoLabelSet::default());
                prop_assert!(db.len() <= budget);
            }
        }
    }
}
