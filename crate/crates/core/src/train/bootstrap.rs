//! Bootstrap estimates of metric mean and spread over the test set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{all_metrics, MetricError, Metrics};

pub const DEFAULT_BOOTSTRAP: usize = 10;
/// Consecutive single-class redraws tolerated before giving up.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation over resamples.
    pub std: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: MetricSummary,
    pub auprc: MetricSummary,
    pub min_p_se: MetricSummary,
    pub n_bootstrap: usize,
    pub seed: u64,
    #[serde(default)]
    pub config: serde_json::Value,
}

/// A report together with the resample indices that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub report: EvalReport,
    pub resamples: Vec<Vec<usize>>,
    pub per_resample: Vec<Metrics>,
}

fn summarize(per: &[Metrics], n: usize, seed: u64) -> EvalReport {
    let pick = |f: fn(&Metrics) -> f64| MetricSummary::of(&per.iter().map(f).collect::<Vec<_>>());
    EvalReport {
        auroc: pick(|m| m.auroc),
        auprc: pick(|m| m.auprc),
        min_p_se: pick(|m| m.min_p_se),
        n_bootstrap: n,
        seed,
        config: serde_json::Value::Null,
    }
}

fn both_classes(labels: &[u8], idx: &[usize]) -> bool {
    let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
    pos > 0 && pos < idx.len()
}

/// Like [`bootstrap_eval`] with a caller-supplied resampler.
pub fn bootstrap_with(
    scores: &[f64],
    labels: &[u8],
    n: usize,
    seed: u64,
    sampler: &mut dyn FnMut(&mut ChaCha8Rng, usize) -> Vec<usize>,
) -> Result<BootstrapRun, MetricError> {
    if n == 0 {
        return Err(MetricError::Undefined {
            metric: "bootstrap",
            reason: "zero resamples".into(),
        });
    }
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resamples = Vec::with_capacity(n);
    let mut per = Vec::with_capacity(n);
    for _ in 0..n {
        let mut redraws = 0;
        let idx = loop {
            let idx = sampler(&mut rng, scores.len());
            if both_classes(labels, &idx) {
                break idx;
            }
            redraws += 1;
            if redraws >= MAX_REDRAWS {
                return Err(MetricError::Undefined {
                    metric: "bootstrap",
                    reason: format!("{MAX_REDRAWS} consecutive single-class resamples"),
                });
            }
        };
        per.push(replay_one(scores, labels, &idx)?);
        resamples.push(idx);
    }
    Ok(BootstrapRun {
        report: summarize(&per, n, seed),
        resamples,
        per_resample: per,
    })
}

/// `n` resamples with replacement of the full test size; single-class
/// resamples are redrawn.
pub fn bootstrap_eval(
    scores: &[f64],
    labels: &[u8],
    n: usize,
    seed: u64,
) -> Result<BootstrapRun, MetricError> {
    bootstrap_with(scores, labels, n, seed, &mut |rng, len| {
        (0..len).map(|_| rng.gen_range(0..len)).collect()
    })
}

fn replay_one(scores: &[f64], labels: &[u8], idx: &[usize]) -> Result<Metrics, MetricError> {
    let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
    let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
    all_metrics(&s, &l)
}

/// Recomputes a report from logged resample indices.
pub fn replay(
    scores: &[f64],
    labels: &[u8],
    resamples: &[Vec<usize>],
    seed: u64,
) -> Result<EvalReport, MetricError> {
    let per = resamples
        .iter()
        .map(|idx| replay_one(scores, labels, idx))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(&per, resamples.len(), seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::metrics::{auprc, auroc, min_p_se};

    fn data(seed: u64, n: usize) -> (Vec<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect();
        let scores = labels
            .iter()
            .map(|&l| rng.gen_range(0.0..1.0) + 0.3 * l as f64)
            .collect();
        (scores, labels)
    }

    #[test]
    fn deterministic_and_replayable() {
        let (s, l) = data(1, 200);
        let a = bootstrap_eval(&s, &l, 10, 42).unwrap();
        assert_eq!(a, bootstrap_eval(&s, &l, 10, 42).unwrap());
        assert_eq!(a.resamples.len(), 10);
        assert!(a.resamples.iter().all(|r| r.len() == 200));
        let r = replay(&s, &l, &a.resamples, 42).unwrap();
        assert!((r.auroc.mean - a.report.auroc.mean).abs() < 1e-12);
        assert!((r.auprc.std - a.report.auprc.std).abs() < 1e-12);
        assert!((r.min_p_se.mean - a.report.min_p_se.mean).abs() < 1e-12);
        assert!(a.report.auroc.std >= 0.0);
    }

    #[test]
    fn single_class_set_is_an_error() {
        let err = bootstrap_eval(&[0.5; 20], &[1; 20], 10, 0).unwrap_err();
        assert!(matches!(
            err,
            MetricError::Undefined {
                metric: "bootstrap",
                ..
            }
        ));
    }

    #[test]
    fn identity_resample_equals_point_metrics() {
        let (s, l) = data(2, 50);
        let run = bootstrap_with(&s, &l, 1, 0, &mut |_, n| (0..n).collect()).unwrap();
        assert_eq!(run.report.auroc.mean, auroc(&s, &l).unwrap());
        assert_eq!(run.report.auprc.mean, auprc(&s, &l).unwrap());
        assert_eq!(run.report.min_p_se.mean, min_p_se(&s, &l).unwrap());
        assert_eq!(run.report.auroc.std, 0.0);
    }

    #[test]
    fn redraws_single_class_resamples() {
        // one positive among 30: many resamples miss it and must be redrawn
        let mut l = vec![0u8; 30];
        l[0] = 1;
        let s: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let run = bootstrap_eval(&s, &l, 10, 3).unwrap();
        for r in &run.resamples {
            assert!(r.contains(&0));
        }
    }
}
