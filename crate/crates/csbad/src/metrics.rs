//! Detection-quality metrics: IoU-matched average precision, mAP50-95,
//! margin of error, and the cross-domain performance matrix.
//!
//! Average precision uses all-point interpolation: the area under the
//! precision envelope over recall, computed from the global
//! confidence-ranked true/false-positive list. Evaluation is
//! single-category; apply a [`crate::core::LabelMap`] upstream when class
//! ids need collapsing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{iou, Detection, FrameRecord, ValidationSet};
use crate::util::format_sig;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metric undefined: no ground-truth objects")]
    UndefinedMetric,
    #[error("need at least 2 scores for a margin of error, got {0}")]
    InsufficientSamples(usize),
    #[error("evaluator failed on cell ({row}, {col}): {reason}")]
    Evaluator {
        row: usize,
        col: usize,
        reason: String,
    },
    #[error("non-finite performance value at cell ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("malformed matrix CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
}

/// Predictions and ground truth for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalPair {
    pub predictions: Vec<Detection>,
    pub ground_truth: Vec<Detection>,
}

impl EvalPair {
    /// Build an evaluation pair from a simulated frame; `None` when the frame
    /// carries no ground truth.
    pub fn from_frame(frame: &FrameRecord) -> Option<Self> {
        frame.ground_truth.as_ref().map(|gt| EvalPair {
            predictions: frame.detections.clone(),
            ground_truth: gt.clone(),
        })
    }
}

/// Match outcome for one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOutcome {
    /// Index into `pair.predictions`.
    pub prediction: usize,
    /// Matched ground-truth index, if any.
    pub ground_truth: Option<usize>,
    /// IoU with the matched ground truth (0.0 when unmatched).
    pub iou: f64,
}

impl MatchOutcome {
    pub fn matched(&self) -> bool {
        self.ground_truth.is_some()
    }
}

/// Greedy matching: predictions in descending confidence (stable on ties)
/// each claim the unmatched ground-truth box of highest IoU, provided that
/// IoU meets the threshold. Each ground truth is matched at most once.
///
/// Outcomes come back in processing order. Requires `0 < iou_threshold <= 1`.
pub fn match_detections(pair: &EvalPair, iou_threshold: f64) -> Vec<MatchOutcome> {
    debug_assert!(iou_threshold > 0.0 && iou_threshold <= 1.0);
    let mut order: Vec<usize> = (0..pair.predictions.len()).collect();
    order.sort_by(|&a, &b| {
        pair.predictions[b]
            .confidence
            .total_cmp(&pair.predictions[a].confidence)
    });

    let mut gt_used = vec![false; pair.ground_truth.len()];
    let mut outcomes = Vec::with_capacity(order.len());
    for pred_idx in order {
        let pred = &pair.predictions[pred_idx];
        let mut best: Option<(usize, f64)> = None;
        for (gt_idx, gt) in pair.ground_truth.iter().enumerate() {
            if gt_used[gt_idx] {
                continue;
            }
            let overlap = iou(&pred.bbox, &gt.bbox).unwrap_or(0.0);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gt_idx, overlap));
            }
        }
        match best {
            Some((gt_idx, overlap)) => {
                gt_used[gt_idx] = true;
                outcomes.push(MatchOutcome {
                    prediction: pred_idx,
                    ground_truth: Some(gt_idx),
                    iou: overlap,
                });
            }
            None => outcomes.push(MatchOutcome {
                prediction: pred_idx,
                ground_truth: None,
                iou: 0.0,
            }),
        }
    }
    outcomes
}

/// Average precision at one IoU threshold over a set of frames.
///
/// Errors with [`MetricsError::UndefinedMetric`] when there is no ground
/// truth at all; returns 0.0 when there are no predictions.
pub fn average_precision(pairs: &[EvalPair], iou_threshold: f64) -> Result<f64, MetricsError> {
    let total_gt: usize = pairs.iter().map(|p| p.ground_truth.len()).sum();
    if total_gt == 0 {
        return Err(MetricsError::UndefinedMetric);
    }

    // Global ranked list: (confidence, is_true_positive), built in frame
    // order so that the stable sort breaks confidence ties by input order.
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    for pair in pairs {
        let mut flags = vec![false; pair.predictions.len()];
        for outcome in match_detections(pair, iou_threshold) {
            flags[outcome.prediction] = outcome.matched();
        }
        for (pred, &tp) in pair.predictions.iter().zip(&flags) {
            ranked.push((pred.confidence, tp));
        }
    }
    if ranked.is_empty() {
        return Ok(0.0);
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked.len());
    for (rank, (_, is_tp)) in ranked.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        let precision = tp as f64 / (rank + 1) as f64;
        let recall = tp as f64 / total_gt as f64;
        points.push((recall, precision));
    }

    // Precision envelope from the right, then sum area where recall rises.
    let mut envelope = vec![0.0; points.len()];
    let mut running = 0.0f64;
    for i in (0..points.len()).rev() {
        running = running.max(points[i].1);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in points.iter().enumerate() {
        if recall > prev_recall {
            ap += (recall - prev_recall) * envelope[i];
            prev_recall = recall;
        }
    }
    Ok(ap)
}

/// The ten IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds_50_95() -> [f64; 10] {
    let mut out = [0.0; 10];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = (50 + 5 * i) as f64 / 100.0;
    }
    out
}

/// Mean of [`average_precision`] over the thresholds 0.50:0.05:0.95.
pub fn map_50_95(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    let thresholds = iou_thresholds_50_95();
    let mut sum = 0.0;
    for &t in &thresholds {
        sum += average_precision(pairs, t)?;
    }
    Ok(sum / thresholds.len() as f64)
}

/// Margin of error `z * s / sqrt(n)` with the unbiased (n-1) sample
/// standard deviation.
pub fn margin_of_error(scores: &[f64], z: f64) -> Result<f64, MetricsError> {
    let n = scores.len();
    if n < 2 {
        return Err(MetricsError::InsufficientSamples(n));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(z * var.sqrt() / (n as f64).sqrt())
}

/// N x N cross-domain performance: row i is the performance vector of the
/// model trained on stream i, evaluated on every stream's validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPerformanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl CrossPerformanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(MetricsError::InvalidInput(
                "performance matrix must be square".into(),
            ));
        }
        let mut values = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(MetricsError::NonFinite { row: i, col: j });
                }
                values.push(v);
            }
        }
        Ok(CrossPerformanceMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// Evaluate every model on every validation set: `M[i][j] = evaluator(models[i],
/// validation_sets[j])`. Evaluator failures carry their `(i, j)` cell.
pub fn build_cross_performance_matrix<M, F>(
    models: &[M],
    validation_sets: &[ValidationSet],
    mut evaluator: F,
) -> Result<CrossPerformanceMatrix, MetricsError>
where
    F: FnMut(&M, &ValidationSet) -> Result<f64, String>,
{
    let n = models.len();
    if n != validation_sets.len() {
        return Err(MetricsError::InvalidInput(format!(
            "{} models but {} validation sets",
            n,
            validation_sets.len()
        )));
    }
    if n < 2 {
        return Err(MetricsError::InvalidInput(
            "need at least 2 streams to build a cross-performance matrix".into(),
        ));
    }
    let mut values = Vec::with_capacity(n * n);
    for (i, model) in models.iter().enumerate() {
        for (j, val) in validation_sets.iter().enumerate() {
            let v = evaluator(model, val).map_err(|reason| MetricsError::Evaluator {
                row: i,
                col: j,
                reason,
            })?;
            if !v.is_finite() {
                return Err(MetricsError::NonFinite { row: i, col: j });
            }
            values.push(v);
        }
    }
    Ok(CrossPerformanceMatrix { n, values })
}

/// Serialize a matrix as CSV: header `model\eval,<stream ids>`, then one row
/// per model with values at six significant digits.
pub fn matrix_to_csv(m: &CrossPerformanceMatrix, stream_ids: &[u32]) -> String {
    assert_eq!(stream_ids.len(), m.n(), "one id per stream");
    let mut out = String::from("model\\eval");
    for id in stream_ids {
        out.push(',');
        out.push_str(&id.to_string());
    }
    out.push('\n');
    for (i, id) in stream_ids.iter().enumerate() {
        out.push_str(&id.to_string());
        for j in 0..m.n() {
            out.push(',');
            out.push_str(&format_sig(m.get(i, j), 6));
        }
        out.push('\n');
    }
    out
}

/// Parse a matrix CSV produced by [`matrix_to_csv`]. Returns the matrix and
/// the stream ids from the header.
pub fn matrix_from_csv(text: &str) -> Result<(CrossPerformanceMatrix, Vec<u32>), MetricsError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(MetricsError::MalformedCsv {
        line: 1,
        reason: "empty file".into(),
    })?;
    let mut fields = header.split(',');
    fields.next(); // corner label
    let ids: Vec<u32> = fields
        .map(|f| {
            f.trim()
                .parse::<u32>()
                .map_err(|_| MetricsError::MalformedCsv {
                    line: 1,
                    reason: format!("stream id {f:?} is not an integer"),
                })
        })
        .collect::<Result<_, _>>()?;
    if ids.is_empty() {
        return Err(MetricsError::MalformedCsv {
            line: 1,
            reason: "header lists no streams".into(),
        });
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let mut fields = line.split(',');
        fields.next(); // model id
        let row: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| MetricsError::MalformedCsv {
                        line: line_no,
                        reason: format!("{f:?} is not a number"),
                    })
            })
            .collect::<Result<_, _>>()?;
        if row.len() != ids.len() {
            return Err(MetricsError::MalformedCsv {
                line: line_no,
                reason: format!("expected {} values, found {}", ids.len(), row.len()),
            });
        }
        rows.push(row);
    }
    if rows.len() != ids.len() {
        return Err(MetricsError::MalformedCsv {
            line: text.lines().count(),
            reason: format!("expected {} rows, found {}", ids.len(), rows.len()),
        });
    }
    Ok((CrossPerformanceMatrix::from_rows(rows)?, ids))
}
