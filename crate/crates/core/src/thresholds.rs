//! Threshold selection from the supervision log.
//!
//! Two procedures share the sorted log:
//!
//! * [`decision_thresholds`] picks the query band `(lower, upper)`. It slides a
//!   window of exactly `ceil(alpha * |log|)` consecutive records over the log and
//!   keeps the window maximising `H(window) - H(before) - H(after)`, where `H` is
//!   the binary entropy of the same/different answers. Records are partitioned
//!   by index, so duplicate distances on a window boundary are never counted
//!   twice. Ties keep the smallest start index.
//! * [`recognition_threshold`] picks the single cut that maximises the number of
//!   answers reproduced by the rule "same iff distance < cut", testing the
//!   midpoints between consecutive distances plus one sentinel on each side.
//!   Ties keep the smallest cut.
//!
//! Both run in time linear in the log length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::SupervisionLog;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    /// No answers yet: the caller must ask the user.
    #[error("supervision log is empty")]
    EmptyLog,
    /// The effort budget rounds to a zero-length query band.
    #[error("effort budget yields an empty query window")]
    EmptyWindow,
    #[error("effort budget must lie in [0, 1], got {0}")]
    InvalidBudget(f64),
}

/// Target fraction of iterations on which the user is queried.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct EffortBudget(f64);

impl EffortBudget {
    pub fn new(alpha: f64) -> Result<Self, ThresholdError> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(Self(alpha))
        } else {
            Err(ThresholdError::InvalidBudget(alpha))
        }
    }

    pub fn alpha(self) -> f64 {
        self.0
    }

    /// `ceil(alpha * n)`, clamped to `[0, n]`.
    ///
    /// Products within 1e-9 of an integer are snapped to it first, so that
    /// e.g. `0.35 * 20` yields 7 and not 8 after floating-point rounding.
    pub fn window_length(self, n: usize) -> usize {
        let raw = self.0 * n as f64;
        let nearest = raw.round();
        let w = if (raw - nearest).abs() <= 1e-9 { nearest } else { raw.ceil() };
        (w.max(0.0) as usize).min(n)
    }
}

impl TryFrom<f64> for EffortBudget {
    type Error = ThresholdError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<EffortBudget> for f64 {
    fn from(b: EffortBudget) -> f64 {
        b.0
    }
}

/// Query band: distances below `lower` are recognised, above `upper` are new.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionThresholds {
    pub lower: f64,
    pub upper: f64,
}

/// Full result of the window search, useful for auditing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSolution {
    pub thresholds: DecisionThresholds,
    /// Index of the first record inside the window.
    pub start: usize,
    pub len: usize,
    pub score: f64,
}

/// Binary entropy (bits) of a true/false count pair. Empty sets have entropy 0.
pub fn entropy_from_counts(trues: usize, falses: usize) -> f64 {
    let n = trues + falses;
    if trues == 0 || falses == 0 {
        return 0.0;
    }
    let n = n as f64;
    let p = trues as f64 / n;
    let q = falses as f64 / n;
    -(p * p.log2() + q * q.log2())
}

/// Binary entropy (bits) of a multiset of answers.
pub fn binary_entropy<I: IntoIterator<Item = bool>>(answers: I) -> f64 {
    let (t, f) = answers.into_iter().fold((0, 0), |(t, f), a| if a { (t + 1, f) } else { (t, f + 1) });
    entropy_from_counts(t, f)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    trues: usize,
    falses: usize,
}

impl Counts {
    fn add(&mut self, same: bool) {
        if same {
            self.trues += 1;
        } else {
            self.falses += 1;
        }
    }

    fn remove(&mut self, same: bool) {
        if same {
            self.trues -= 1;
        } else {
            self.falses -= 1;
        }
    }

    fn entropy(self) -> f64 {
        entropy_from_counts(self.trues, self.falses)
    }
}

fn window_score(before: Counts, window: Counts, after: Counts) -> f64 {
    window.entropy() - before.entropy() - after.entropy()
}

pub fn decision_thresholds(log: &SupervisionLog, budget: EffortBudget) -> Result<DecisionThresholds, ThresholdError> {
    solve_window(log, budget).map(|s| s.thresholds)
}

/// Sliding-window search with incremental label counts.
pub fn solve_window(log: &SupervisionLog, budget: EffortBudget) -> Result<WindowSolution, ThresholdError> {
    let records = log.records();
    let n = records.len();
    if n == 0 {
        return Err(ThresholdError::EmptyLog);
    }
    let w = budget.window_length(n);
    if w == 0 {
        return Err(ThresholdError::EmptyWindow);
    }

    let mut before = Counts::default();
    let mut window = Counts::default();
    let mut after = Counts::default();
    for r in &records[..w] {
        window.add(r.same);
    }
    for r in &records[w..] {
        after.add(r.same);
    }

    let mut best_start = 0;
    let mut best_score = window_score(before, window, after);
    for start in 1..=(n - w) {
        let leaving = records[start - 1].same;
        let entering = records[start + w - 1].same;
        window.remove(leaving);
        before.add(leaving);
        window.add(entering);
        after.remove(entering);
        let score = window_score(before, window, after);
        if score > best_score {
            best_score = score;
            best_start = start;
        }
    }

    Ok(WindowSolution {
        thresholds: DecisionThresholds { lower: records[best_start].delta, upper: records[best_start + w - 1].delta },
        start: best_start,
        len: w,
        score: best_score,
    })
}

/// Single recognition cut with its training accuracy on the log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecognitionThreshold {
    pub lambda: f64,
    /// Number of log records the rule `same iff delta < lambda` reproduces.
    pub correct: usize,
    pub total: usize,
}

impl RecognitionThreshold {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Sentinel offset used below the smallest and above the largest distance.
pub fn sentinel_epsilon(max_delta: f64) -> f64 {
    f64::max(1e-9, 1e-6 * max_delta)
}

/// Midpoint candidates: one below the smallest distance, one between each
/// consecutive pair, one above the largest. Non-decreasing.
pub fn recognition_candidates(log: &SupervisionLog) -> Vec<f64> {
    let deltas: Vec<f64> = log.deltas().collect();
    let (Some(&first), Some(&last)) = (deltas.first(), deltas.last()) else {
        return Vec::new();
    };
    let eps = sentinel_epsilon(last);
    let mut out = Vec::with_capacity(deltas.len() + 1);
    out.push((first - eps + first) / 2.0);
    out.extend(deltas.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.push((last + last + eps) / 2.0);
    out
}

pub fn recognition_threshold(log: &SupervisionLog) -> Result<RecognitionThreshold, ThresholdError> {
    let records = log.records();
    if records.is_empty() {
        return Err(ThresholdError::EmptyLog);
    }
    let total_false = records.iter().filter(|r| !r.same).count();

    // `below` = number of records with delta < candidate; candidates are
    // non-decreasing so the pointer only moves forward.
    let mut below = 0usize;
    let mut trues_below = 0usize;
    let mut falses_below = 0usize;
    let mut best: Option<(f64, usize)> = None;
    for lambda in recognition_candidates(log) {
        while below < records.len() && records[below].delta < lambda {
            if records[below].same {
                trues_below += 1;
            } else {
                falses_below += 1;
            }
            below += 1;
        }
        let correct = trues_below + (total_false - falses_below);
        if best.is_none_or(|(_, c)| correct > c) {
            best = Some((lambda, correct));
        }
    }
    let (lambda, correct) = best.expect("at least two candidates");
    Ok(RecognitionThreshold { lambda, correct, total: records.len() })
}
