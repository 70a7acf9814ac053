//! Anomaly scores, detection rules and the evaluation metrics built on them.

mod curve;
mod report;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::{ImageDataset, Provenance};
use crate::error::{input_err, Result};
use crate::nn::{LossKind, Model};

pub use curve::{aupr, auroc, Curve};
pub use report::{fmt_metric, MetricRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherIsAnomalous,
    LowerIsAnomalous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: u64,
    pub score: f64,
    /// Ground truth: anomaly or poison.
    pub positive: bool,
    pub direction: Direction,
}

impl ScoreRecord {
    pub fn new(id: u64, score: f64, positive: bool, direction: Direction) -> Self {
        Self { id, score, positive, direction }
    }

    /// Score oriented so that larger always means more anomalous.
    pub(crate) fn oriented(&self) -> f64 {
        match self.direction {
            Direction::HigherIsAnomalous => self.score,
            Direction::LowerIsAnomalous => -self.score,
        }
    }
}

pub(crate) fn check_records(records: &[ScoreRecord]) -> Result<()> {
    if let Some(first) = records.first() {
        if records.iter().any(|r| r.direction != first.direction) {
            return input_err("record set mixes score directions");
        }
    }
    if let Some(r) = records.iter().find(|r| !r.score.is_finite()) {
        return input_err(format!("record {} has non-finite score {}", r.id, r.score));
    }
    Ok(())
}

/// One higher-is-anomalous record per image, scored by model loss. Truth
/// is any non-normal provenance.
pub fn score_losses(model: &Model, dataset: &ImageDataset, kind: LossKind) -> Result<Vec<ScoreRecord>> {
    let samples = match kind {
        LossKind::ReconstructionMse => dataset.to_autoencoder_samples(),
        LossKind::CrossEntropy => dataset.to_classifier_samples(),
    };
    let losses = model.losses(&samples, kind)?;
    Ok(losses
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            ScoreRecord::new(dataset.ids[i], l, dataset.flags[i] != Provenance::Normal, Direction::HigherIsAnomalous)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn from_verdicts(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return input_err(format!("{} verdicts for {} labels", predicted.len(), actual.len()));
        }
        let mut c = Self::default();
        predicted.iter().zip(actual).for_each(|(&p, &a)| c.record(p, a));
        Ok(c)
    }
}

/// Positive iff `score >= tau` (higher-is-anomalous) or `score < tau`
/// (lower-is-anomalous).
pub fn threshold_detect(records: &[ScoreRecord], tau: f64) -> Result<ConfusionCounts> {
    if tau.is_nan() || tau == f64::INFINITY {
        return input_err(format!("threshold {tau} is not usable"));
    }
    check_records(records)?;
    let mut c = ConfusionCounts::default();
    for r in records {
        let flagged = match r.direction {
            Direction::HigherIsAnomalous => r.score >= tau,
            Direction::LowerIsAnomalous => r.score < tau,
        };
        c.record(flagged, r.positive);
    }
    Ok(c)
}

/// Ratios with zero denominators are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionStats {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_measure: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fpr: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion_stats(c: &ConfusionCounts) -> ConfusionStats {
    let recall = ratio(c.tp, c.tp + c.fn_);
    ConfusionStats {
        precision: ratio(c.tp, c.tp + c.fp),
        recall,
        f_measure: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        tpr: recall,
        tnr: ratio(c.tn, c.tn + c.fp),
        fpr: ratio(c.fp, c.fp + c.tn),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKVerdict {
    pub k: usize,
    /// The `k` most probable tokens, most probable first.
    pub candidates: Vec<usize>,
    pub actual: usize,
    pub anomalous: bool,
}

fn rank_order(dist: &[f64], a: usize, b: usize) -> Ordering {
    dist[b].total_cmp(&dist[a]).then(a.cmp(&b))
}

/// Zero-based position of `actual` when tokens are sorted by descending
/// probability, ties by ascending id. Top-k flags it iff `rank >= k`.
pub fn topk_rank(dist: &[f64], actual: usize) -> Result<usize> {
    if actual >= dist.len() {
        return input_err(format!("token {actual} outside vocabulary {}", dist.len()));
    }
    Ok((0..dist.len()).filter(|&t| rank_order(dist, t, actual) == Ordering::Less).count())
}

pub fn topk_detect(dist: &[f64], actual: usize, k: usize) -> Result<TopKVerdict> {
    if k == 0 || k > dist.len() {
        return input_err(format!("k = {k} outside 1..={}", dist.len()));
    }
    let rank = topk_rank(dist, actual)?;
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| rank_order(dist, a, b));
    order.truncate(k);
    Ok(TopKVerdict { k, candidates: order, actual, anomalous: rank >= k })
}

/// A session is abnormal iff any of its entries is.
pub fn aggregate_session(entry_verdicts: &[bool]) -> Result<bool> {
    if entry_verdicts.is_empty() {
        return input_err("session has no entries");
    }
    Ok(entry_verdicts.iter().any(|&v| v))
}

/// Groups per-entry verdicts by session id (`0..n_sessions`) and
/// aggregates each group.
pub fn session_verdicts(sessions: &[usize], entry_verdicts: &[bool], n_sessions: usize) -> Result<Vec<bool>> {
    if sessions.len() != entry_verdicts.len() {
        return input_err(format!("{} session ids for {} verdicts", sessions.len(), entry_verdicts.len()));
    }
    let mut seen = vec![false; n_sessions];
    let mut out = vec![false; n_sessions];
    for (&s, &v) in sessions.iter().zip(entry_verdicts) {
        if s >= n_sessions {
            return input_err(format!("session id {s} out of range"));
        }
        seen[s] = true;
        out[s] |= v;
    }
    if let Some(s) = seen.iter().position(|&v| !v) {
        return input_err(format!("session {s} has no entries"));
    }
    Ok(out)
}
