//! Per-stream SELECT strategies: stateful machines deciding, frame by frame,
//! whether to forward a frame to the teaching server.
//!
//! Threshold strategies observe `warmup` frames without forwarding, estimate
//! the `(1 - alpha)`-upper percentile of the frame confidence scores, and then
//! forward frames whose score meets the threshold until the budget is spent.

use std::str::FromStr;

use rand::Rng;
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{frame_confidence_score, FrameRecord, FrameRef};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("warm-up score list is empty")]
    EmptyWarmup,
    #[error("selector already exhausted its budget")]
    SelectorExhausted,
    #[error("invalid selector configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TopConfidence,
    LeastConfidence,
    UniformRandom,
    NFirst,
    BernoulliLeastConfidence,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::TopConfidence,
        Strategy::LeastConfidence,
        Strategy::UniformRandom,
        Strategy::NFirst,
        Strategy::BernoulliLeastConfidence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::TopConfidence => "top_confidence",
            Strategy::LeastConfidence => "least_confidence",
            Strategy::UniformRandom => "uniform_random",
            Strategy::NFirst => "n_first",
            Strategy::BernoulliLeastConfidence => "bernoulli_least_confidence",
        }
    }

    /// True for strategies that estimate a threshold from a warm-up window.
    pub fn uses_warmup(&self) -> bool {
        matches!(self, Strategy::TopConfidence | Strategy::LeastConfidence)
    }
}

impl FromStr for Strategy {
    type Err = SelectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                SelectError::InvalidConfig(format!(
                    "unknown strategy {s:?}; expected one of: {}",
                    Strategy::ALL.map(|st| st.name()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub strategy: Strategy,
    /// Target selection rate for threshold and uniform strategies, in (0, 1].
    pub alpha: f64,
    /// Warm-up window length `w` for threshold strategies.
    pub warmup: usize,
    /// Per-stream frame budget `B`.
    pub budget: usize,
    /// Smoothing parameter `b` of the Bernoulli least-confidence strategy.
    pub bernoulli_b: f64,
    pub rng_seed: u64,
}

impl SelectConfig {
    pub fn new(strategy: Strategy, alpha: f64, warmup: usize, budget: usize) -> Self {
        SelectConfig {
            strategy,
            alpha,
            warmup,
            budget,
            bernoulli_b: 0.1,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SelectError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(SelectError::InvalidConfig(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.warmup < 1 {
            return Err(SelectError::InvalidConfig("warmup must be >= 1".into()));
        }
        if self.budget < 1 {
            return Err(SelectError::InvalidConfig("budget must be >= 1".into()));
        }
        if self.bernoulli_b.is_nan() || self.bernoulli_b <= 0.0 {
            return Err(SelectError::InvalidConfig(format!(
                "bernoulli_b must be > 0, got {}",
                self.bernoulli_b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    WarmUp,
    Active,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Forward,
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorState {
    pub phase: Phase,
    pub warmup_scores: Vec<f64>,
    pub threshold: Option<f64>,
    pub selected_count: usize,
    pub frames_seen: u64,
}

/// Nearest-rank upper percentile: sort descending and return the element at
/// 1-indexed rank `ceil(alpha * n)`. The fraction of scores `>= result` is
/// at least `alpha`.
pub fn percentile_threshold(scores: &[f64], alpha: f64) -> Result<f64, SelectError> {
    if scores.is_empty() {
        return Err(SelectError::EmptyWarmup);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(SelectError::InvalidConfig(format!(
            "alpha must be in (0, 1], got {alpha}"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // Guard the ceil against float slop like 0.2 * 10 = 2.0000000000000004.
    let rank = (alpha * sorted.len() as f64 - 1e-9).ceil() as usize;
    let rank = rank.clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// One per-stream selection machine. Mutating [`Selector::observe`] realizes
/// the spec's `(state, cfg, frame) -> (decision, state')` transition.
#[derive(Debug, Clone)]
pub struct Selector {
    cfg: SelectConfig,
    state: SelectorState,
    rng: Pcg64Mcg,
}

impl Selector {
    pub fn new(cfg: SelectConfig) -> Result<Self, SelectError> {
        cfg.validate()?;
        let phase = if cfg.strategy.uses_warmup() {
            Phase::WarmUp
        } else {
            Phase::Active
        };
        let rng = rng::derive_rng(cfg.rng_seed, &[rng::tag::SELECT]);
        Ok(Selector {
            cfg,
            state: SelectorState {
                phase,
                warmup_scores: Vec::new(),
                threshold: None,
                selected_count: 0,
                frames_seen: 0,
            },
            rng,
        })
    }

    pub fn config(&self) -> &SelectConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SelectorState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.phase == Phase::Done
    }

    pub fn observe(&mut self, frame: &FrameRecord) -> Result<Decision, SelectError> {
        if self.state.phase == Phase::Done {
            return Err(SelectError::SelectorExhausted);
        }
        self.state.frames_seen += 1;
        let score = frame_confidence_score(frame);

        if self.state.phase == Phase::WarmUp {
            self.state.warmup_scores.push(score);
            if self.state.warmup_scores.len() == self.cfg.warmup {
                let delta = percentile_threshold(&self.state.warmup_scores, self.cfg.alpha)?;
                self.state.threshold = Some(delta);
                self.state.phase = Phase::Active;
            }
            return Ok(Decision::Skip);
        }

        let forward = match self.cfg.strategy {
            Strategy::TopConfidence => score >= self.state.threshold.expect("threshold set"),
            Strategy::LeastConfidence => score <= self.state.threshold.expect("threshold set"),
            Strategy::UniformRandom => self.rng.gen::<f64>() >= 1.0 - self.cfg.alpha,
            Strategy::NFirst => true,
            Strategy::BernoulliLeastConfidence => {
                let p = self.cfg.bernoulli_b / (self.cfg.bernoulli_b + score);
                self.rng.gen::<f64>() < p
            }
        };

        if forward {
            self.state.selected_count += 1;
            if self.state.selected_count == self.cfg.budget {
                self.state.phase = Phase::Done;
            }
            Ok(Decision::Forward)
        } else {
            Ok(Decision::Skip)
        }
    }
}

/// Budget not met when the stream ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub budget: usize,
    pub selected: usize,
}

/// Outcome of draining one stream through a selector.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRun {
    pub selected: Vec<FrameRef>,
    pub frames_seen: u64,
    pub shortfall: Option<Shortfall>,
}

/// Drain a stream until the budget is met or the stream ends. Selected frame
/// refs come back in stream order; a shortfall is reported, not an error.
///
/// ```
/// use csbad::select::{run_selector, SelectConfig, Strategy};
/// use csbad::core::FrameRecord;
///
/// let stream = (0..10).map(|t| FrameRecord {
///     stream_id: 0,
///     t,
///     detections: vec![],
///     ground_truth: None,
/// });
/// let cfg = SelectConfig::new(Strategy::NFirst, 0.1, 1, 3);
/// let run = run_selector(cfg, stream).unwrap();
/// assert_eq!(run.selected.iter().map(|r| r.t).collect::<Vec<_>>(), vec![0, 1, 2]);
/// assert!(run.shortfall.is_none());
/// ```
pub fn run_selector(
    cfg: SelectConfig,
    stream: impl IntoIterator<Item = FrameRecord>,
) -> Result<SelectionRun, SelectError> {
    let budget = cfg.budget;
    let mut selector = Selector::new(cfg)?;
    let mut selected = Vec::new();
    for frame in stream {
        if selector.is_done() {
            break;
        }
        if selector.observe(&frame)? == Decision::Forward {
            selected.push(frame.frame_ref());
        }
    }
    let shortfall = (selected.len() < budget).then_some(Shortfall {
        budget,
        selected: selected.len(),
    });
    Ok(SelectionRun {
        frames_seen: selector.state().frames_seen,
        selected,
        shortfall,
    })
}
