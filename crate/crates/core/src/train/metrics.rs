//! Ranking metrics for binary prediction.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{metric} is undefined: {reason}")]
    Undefined {
        metric: &'static str,
        reason: String,
    },
    #[error("{0} scores but {1} labels")]
    Length(usize, usize),
    #[error("scores must be finite")]
    NonFinite,
}

fn check(
    metric: &'static str,
    scores: &[f64],
    labels: &[u8],
    need_negative: bool,
) -> Result<(u64, u64), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || (need_negative && neg == 0) {
        return Err(MetricError::Undefined {
            metric,
            reason: format!("{pos} positives and {neg} negatives"),
        });
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// `(true positives, false positives)` after each group of equal scores,
/// walking from the highest score down.
fn threshold_counts(scores: &[f64], labels: &[u8]) -> Vec<(u64, u64)> {
    let idx = descending(scores);
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (k, &i) in idx.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = idx.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push((tp, fp));
        }
    }
    out
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let (pos, neg) = check("AUROC", scores, labels, true)?;
    // twice the Mann-Whitney U, kept integral
    let mut u2: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end < idx.len() && scores[idx[end]] == scores[idx[k]] {
            end += 1;
        }
        let p_g = idx[k..end].iter().filter(|&&i| labels[i] == 1).count() as u64;
        let n_g = (end - k) as u64 - p_g;
        u2 += p_g * (2 * neg_below + n_g);
        neg_below += n_g;
        k = end;
    }
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Average precision: recall increments weighted by the precision at each
/// distinct score threshold.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let (pos, _) = check("AUPRC", scores, labels, false)?;
    let mut ap = 0.0;
    let mut prev_tp = 0;
    for (tp, fp) in threshold_counts(scores, labels) {
        if tp > prev_tp {
            ap += (tp - prev_tp) as f64 * (tp as f64 / (tp + fp) as f64);
        }
        prev_tp = tp;
    }
    // rounding in the sum can overshoot 1 by an ulp
    Ok((ap / pos as f64).min(1.0))
}

/// Best `min(precision, sensitivity)` over all distinct score thresholds.
pub fn min_p_se(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let (pos, _) = check("min(+P, Se)", scores, labels, true)?;
    Ok(threshold_counts(scores, labels)
        .into_iter()
        .map(|(tp, fp)| {
            let precision = tp as f64 / (tp + fp) as f64;
            let recall = tp as f64 / pos as f64;
            precision.min(recall)
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auroc: f64,
    pub auprc: f64,
    pub min_p_se: f64,
}

pub fn all_metrics(scores: &[f64], labels: &[u8]) -> Result<Metrics, MetricError> {
    Ok(Metrics {
        auroc: auroc(scores, labels)?,
        auprc: auprc(scores, labels)?,
        min_p_se: min_p_se(scores, labels)?,
    })
}
