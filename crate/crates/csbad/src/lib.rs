//! Deterministic desk-scale simulator for clustered stream-based active
//! distillation.
//!
//! A fleet of camera nodes runs compact student detectors. Each node decides
//! frame by frame which images to forward to a teaching server, the server
//! pseudo-labels them with an imperfect teacher, streams are grouped by the
//! cross-domain performance of stream-specific models, and one student is
//! trained per group with epoch counts adjusted so every model gets the same
//! iteration budget. Everything runs on a synthetic world so the whole loop
//! is testable on a desk, with seeds making every run reproducible.
//!
//! The pieces:
//!
//! * [`core`] — boxes, detections, frames, per-stream sample databases.
//! * [`select`] — the per-frame SELECT strategies (top-confidence
//!   thresholding and its baselines).
//! * [`metrics`] — IoU matching, average precision, mAP50-95, margin of
//!   error, and the cross-performance matrix.
//! * [`cluster`] — distance matrix, single-linkage dendrogram, threshold/K
//!   cuts, and the deployment map.
//! * [`orchestrator`] — the end-to-end pipeline and training-cost
//!   accounting.
//! * [`simworld`] — the synthetic multi-camera world: planted domain
//!   clusters, stream generation, the teacher-noise model, and the analytic
//!   transfer-performance trainer.
//! * [`cli`] — config-driven experiment runner behind the `csbad` binary.
//!
//! Each major capability has a runnable example under `examples/`; start
//! with `end_to_end`.

pub mod cli;
pub mod cluster;
pub mod core;
pub mod metrics;
pub mod orchestrator;
pub mod rng;
pub mod select;
pub mod simworld;
mod util;

pub use crate::core::{
    BoundingBox, Detection, FrameRecord, FrameRef, PseudoLabelSet, SampleDatabase,
};
pub use crate::select::{SelectConfig, Selector, Strategy};
pub use crate::util::format_sig;
