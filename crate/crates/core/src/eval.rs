//! Ranking metrics, thresholded metrics and threshold selection.
//!
//! Metrics that are undefined for the given labels (a single class present)
//! are `None` and serialize as JSON `null`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub window_ids: Vec<usize>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>, window_ids: Vec<usize>) -> Result<Self> {
        if scores.len() != labels.len() || scores.len() != window_ids.len() {
            return Err(Error::Shape(format!(
                "{} scores, {} labels, {} window ids",
                scores.len(),
                labels.len(),
                window_ids.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("score {s}")));
        }
        Ok(Self { scores, labels, window_ids })
    }

    /// Scores without provenance, all attributed to window 0.
    pub fn unattributed(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let n = scores.len();
        Self::new(scores, labels, vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn extend(&mut self, other: &ScoredSet) {
        self.scores.extend_from_slice(&other.scores);
        self.labels.extend_from_slice(&other.labels);
        self.window_ids.extend_from_slice(&other.window_ids);
    }
}

/// Mann-Whitney AUC with average ranks for ties.
pub fn roc_auc(s: &ScoredSet) -> Option<f64> {
    let n_pos = s.n_positive();
    let n_neg = s.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && s.scores[order[j + 1]] == s.scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_block = order[i..=j].iter().filter(|&&k| s.labels[k] == 1).count();
        rank_sum_pos += avg_rank * pos_in_block as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

/// Average precision: descending score, ties kept in original index order.
pub fn pr_auc(s: &ScoredSet) -> Option<f64> {
    let n_pos = s.n_positive();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if s.labels[k] == 1 {
            tp += 1;
            ap += tp as f64 / (rank + 1) as f64;
        }
    }
    Some(ap / n_pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub precision: f64,
    pub recall: Option<f64>,
    pub f_beta: f64,
    pub accuracy: Option<f64>,
    pub confusion: Confusion,
}

pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

/// Predicts positive iff `score >= threshold`.
pub fn confusion_at(s: &ScoredSet, threshold: f64) -> ThresholdMetrics {
    confusion_beta(s, threshold, BETA)
}

pub fn confusion_beta(s: &ScoredSet, threshold: f64, beta: f64) -> ThresholdMetrics {
    let mut c = Confusion::default();
    for (&score, &y) in s.scores.iter().zip(&s.labels) {
        match (score >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let precision = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
    let recall = (c.tp + c.fn_ > 0).then(|| c.tp as f64 / (c.tp + c.fn_) as f64);
    let accuracy = (c.total() > 0).then(|| (c.tp + c.tn) as f64 / c.total() as f64);
    ThresholdMetrics {
        precision,
        recall,
        f_beta: f_beta(precision, recall.unwrap_or(0.0), beta),
        accuracy,
        confusion: c,
    }
}

/// Inverse-CDF quantiles at q = 0.01..0.99 plus min and max, ascending and deduplicated.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut c: Vec<f64> = (1..=99usize).map(|k| sorted[(k * n).div_ceil(100).max(1) - 1]).collect();
    c.push(sorted[0]);
    c.push(sorted[n - 1]);
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

/// The candidate with the highest validation F_β; ties go to the smallest threshold.
pub fn select_threshold(validation: &ScoredSet, beta: f64) -> Result<f64> {
    let candidates = threshold_candidates(&validation.scores);
    let mut best: Option<(f64, f64)> = None;
    for t in candidates {
        let f = confusion_beta(validation, t, beta).f_beta;
        if best.is_none_or(|(_, bf)| f > bf) {
            best = Some((t, f));
        }
    }
    best.map(|(t, _)| t).ok_or_else(|| Error::Argument("threshold selection needs a non-empty validation set".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
    pub train_nodes: usize,
    pub val_nodes: usize,
    pub test_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model: String,
    pub variant: String,
    pub seed: u64,
    pub split_hash: String,
    pub split_sizes: SplitSizes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub variant: String,
    pub seed: u64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub precision: f64,
    pub recall: Option<f64>,
    pub f_beta: f64,
    pub beta: f64,
    pub accuracy: Option<f64>,
    pub threshold: f64,
    pub confusion: Confusion,
    pub positive_rate: Option<f64>,
    pub split_sizes: SplitSizes,
    pub split_hash: String,
}

/// Test-split metrics at a threshold chosen beforehand on validation scores.
pub fn assemble_report(test: &ScoredSet, threshold: f64, meta: ReportMeta) -> EvalReport {
    let m = confusion_at(test, threshold);
    EvalReport {
        model: meta.model,
        variant: meta.variant,
        seed: meta.seed,
        roc_auc: roc_auc(test),
        pr_auc: pr_auc(test),
        precision: m.precision,
        recall: m.recall,
        f_beta: m.f_beta,
        beta: BETA,
        accuracy: m.accuracy,
        threshold,
        confusion: m.confusion,
        positive_rate: (!test.is_empty()).then(|| test.n_positive() as f64 / test.len() as f64),
        split_sizes: meta.split_sizes,
        split_hash: meta.split_hash,
    }
}
