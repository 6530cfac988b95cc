//! Split-conformal calibration of an uncertainty threshold and the
//! prediction sets it induces.
//!
//! A calibration record's nonconformity score is the uncertainty of its
//! best admissible generation: among generations equivalent to the
//! reference, the one most similar to it. The threshold is the
//! `⌈(N+1)(1-α)⌉`-th smallest score; if that rank exceeds `N` the
//! threshold is unbounded and every generation is admitted. Under
//! exchangeability, a test record with at least one admissible generation
//! has one in its prediction set with probability at least `1 - α`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::clustering::{cluster, equivalent, Clustering};
use crate::data::{Dataset, Record};
use crate::error::{Error, Result};
use crate::uncertainty;

/// Calibrated uncertainty threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Finite(f64),
    /// The quantile rank exceeded the calibration size; admits everything.
    Unbounded,
}

impl Threshold {
    pub fn admits(&self, score: f64) -> bool {
        match self {
            Threshold::Finite(q) => score <= *q,
            Threshold::Unbounded => true,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Threshold::Finite(q) => Some(*q),
            Threshold::Unbounded => None,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, Threshold::Unbounded)
    }
}

impl PartialOrd for Threshold {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Threshold::Finite(a), Threshold::Finite(b)) => a.partial_cmp(b),
            (Threshold::Finite(_), Threshold::Unbounded) => Some(Ordering::Less),
            (Threshold::Unbounded, Threshold::Finite(_)) => Some(Ordering::Greater),
            (Threshold::Unbounded, Threshold::Unbounded) => Some(Ordering::Equal),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Finite(q) => write!(f, "{q}"),
            Threshold::Unbounded => f.write_str(UNBOUNDED),
        }
    }
}

const UNBOUNDED: &str = "unbounded";

// Serialized as a plain number, or the string "unbounded".
impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Finite(q) => s.serialize_f64(*q),
            Threshold::Unbounded => s.serialize_str(UNBOUNDED),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(q) => Ok(Threshold::Finite(q)),
            Repr::Text(t) if t == UNBOUNDED => Ok(Threshold::Unbounded),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"{UNBOUNDED}\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub alpha: f64,
    pub q_hat: Threshold,
    /// Number of calibration scores kept (N).
    pub n_calibration: usize,
    /// Calibration records skipped for lacking an admissible generation.
    pub skipped: usize,
    pub lambda: f64,
    pub tau: f64,
    /// Kept nonconformity scores, ascending. May be omitted from artifacts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
}

impl CalibrationResult {
    pub fn without_scores(mut self) -> Self {
        self.scores.clear();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub record_id: String,
    pub member_indices: Vec<usize>,
    pub q_hat_used: Threshold,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.member_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_indices.is_empty()
    }
}

/// 1-based rank `⌈(n+1)(1-α)⌉`, never below 1.
///
/// Products that land within floating-point noise of an integer are
/// snapped to it, so e.g. `10 · (1 - 0.3)` yields 7 rather than 8.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    let nearest = x.round();
    let rank = if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (rank as usize).max(1)
}

/// Threshold from ascending scores.
pub fn quantile_threshold(sorted: &[f64], alpha: f64) -> Threshold {
    let rank = conformal_rank(sorted.len(), alpha);
    if rank <= sorted.len() {
        Threshold::Finite(sorted[rank - 1])
    } else {
        Threshold::Unbounded
    }
}

/// Index of the admissible generation most similar to the reference,
/// lowest index on ties, or `None` when no generation is admissible.
pub fn best_admissible(record: &Record, tau: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &s) in record.gen_ref_sim.iter().enumerate() {
        if equivalent(s, tau) && best.is_none_or(|b| s > record.gen_ref_sim[b]) {
            best = Some(j);
        }
    }
    best
}

pub fn is_admissible(record: &Record, tau: f64) -> bool {
    record.gen_ref_sim.iter().any(|&s| equivalent(s, tau))
}

/// Nonconformity score of a calibration record.
pub fn nonconformity(record: &Record, clustering: &Clustering, lambda: f64, tau: f64) -> Result<f64> {
    let j = best_admissible(record, tau).ok_or_else(|| Error::NoAdmissible(record.id.clone()))?;
    uncertainty::generation_uncertainty(record, clustering, lambda, j)
}

/// Builds a calibration result from raw (unsorted) kept scores.
pub fn calibrate_scores(
    mut scores: Vec<f64>,
    alpha: f64,
    skipped: usize,
    lambda: f64,
    tau: f64,
) -> Result<CalibrationResult> {
    crate::config::check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::EmptyCalibration { skipped });
    }
    scores.sort_by(f64::total_cmp);
    Ok(CalibrationResult {
        alpha,
        q_hat: quantile_threshold(&scores, alpha),
        n_calibration: scores.len(),
        skipped,
        lambda,
        tau,
        scores,
    })
}

/// Calibrates the threshold on `calibration`, skipping and counting
/// records without an admissible generation.
pub fn calibrate(calibration: &Dataset, alpha: f64, lambda: f64, tau: f64) -> Result<CalibrationResult> {
    let mut scores = Vec::with_capacity(calibration.len());
    let mut skipped = 0;
    for record in calibration.records() {
        match nonconformity(record, &cluster(record, tau), lambda, tau) {
            Ok(r) => scores.push(r),
            Err(Error::NoAdmissible(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    calibrate_scores(scores, alpha, skipped, lambda, tau)
}

/// Prediction set from per-generation uncertainties.
pub fn predict_from_scores(record_id: &str, per_generation: &[f64], q_hat: Threshold) -> PredictionSet {
    PredictionSet {
        record_id: record_id.to_string(),
        member_indices: per_generation
            .iter()
            .enumerate()
            .filter(|(_, &u)| q_hat.admits(u))
            .map(|(j, _)| j)
            .collect(),
        q_hat_used: q_hat,
    }
}

pub fn predict(
    record: &Record,
    clustering: &Clustering,
    calibration: &CalibrationResult,
    lambda: f64,
) -> PredictionSet {
    let report = uncertainty::score(record, clustering, lambda);
    predict_from_scores(&record.id, &report.per_generation, calibration.q_hat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// Share of records with at least one admissible generation (1 for an empty dataset).
    pub rate: f64,
    pub violating_ids: Vec<String>,
}

pub fn admissibility_check(dataset: &Dataset, tau: f64) -> AdmissibilityReport {
    let violating_ids: Vec<String> = dataset
        .records()
        .iter()
        .filter(|r| !is_admissible(r, tau))
        .map(|r| r.id.clone())
        .collect();
    let rate = if dataset.is_empty() {
        1.0
    } else {
        1.0 - violating_ids.len() as f64 / dataset.len() as f64
    };
    AdmissibilityReport {
        rate,
        violating_ids,
    }
}
