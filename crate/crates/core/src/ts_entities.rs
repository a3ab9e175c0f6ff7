//! Abnormal-feature extraction from lab time series by z-score thresholding.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr::{FeatureKind, PatientRecord, TimeSeriesMatrix};

/// Default abnormality threshold on |z|.
pub const DEFAULT_EPSILON: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum TsError {
    #[error("training cohort is empty")]
    EmptyCohort,
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("stats cover {stats} features but the series has {series}")]
    FeatureMismatch { stats: usize, series: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    #[default]
    Population,
    PerPatient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub mean: f64,
    /// Population standard deviation (divide by n).
    pub std: f64,
    pub n_observations: usize,
}

/// Per-feature statistics; `None` marks a feature with no observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub source: StatsSource,
    pub kinds: Vec<FeatureKind>,
    pub features: Vec<Option<FeatureStat>>,
}

/// Running mean/variance accumulator (Welford).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn finish(self) -> Option<FeatureStat> {
        (self.n > 0).then(|| FeatureStat {
            mean: self.mean,
            std: (self.m2 / self.n as f64).max(0.0).sqrt(),
            n_observations: self.n,
        })
    }
}

impl FeatureStats {
    fn accumulate<'a>(
        source: StatsSource,
        series: impl IntoIterator<Item = &'a TimeSeriesMatrix>,
    ) -> Option<Self> {
        let mut it = series.into_iter().peekable();
        let first = *it.peek()?;
        let kinds: Vec<FeatureKind> = first.features().iter().map(|f| f.kind).collect();
        let mut acc = vec![Moments::default(); kinds.len()];
        for ts in it {
            for row in ts.rows() {
                for (m, v) in acc.iter_mut().zip(row) {
                    if let Some(v) = v {
                        m.push(*v);
                    }
                }
            }
        }
        Some(Self {
            source,
            kinds,
            features: acc.into_iter().map(Moments::finish).collect(),
        })
    }

    /// Statistics of one patient's own visits.
    pub fn per_patient(ts: &TimeSeriesMatrix) -> Self {
        Self::accumulate(StatsSource::PerPatient, [ts]).expect("one series")
    }

    pub fn get(&self, feature: usize) -> Option<&FeatureStat> {
        self.features.get(feature).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Statistics chosen by mode: pooled once over the training cohort, or
/// computed on demand from each patient's own record.
#[derive(Debug, Clone, PartialEq)]
pub enum StatsModel {
    Population(FeatureStats),
    PerPatient,
}

impl StatsModel {
    pub fn stats_for<'a>(&'a self, ts: &TimeSeriesMatrix) -> Cow<'a, FeatureStats> {
        match self {
            StatsModel::Population(s) => Cow::Borrowed(s),
            StatsModel::PerPatient => Cow::Owned(FeatureStats::per_patient(ts)),
        }
    }
}

/// Population mode pools every non-missing cell of every training patient.
pub fn compute_feature_stats(
    train: &[PatientRecord],
    mode: StatsSource,
) -> Result<StatsModel, TsError> {
    if train.is_empty() {
        return Err(TsError::EmptyCohort);
    }
    Ok(match mode {
        StatsSource::Population => {
            let stats =
                FeatureStats::accumulate(StatsSource::Population, train.iter().map(|p| &p.ts))
                    .expect("non-empty");
            for (i, s) in stats.features.iter().enumerate() {
                if s.is_none() {
                    tracing::warn!(
                        feature = i,
                        "feature has no observations; stats unavailable"
                    );
                }
            }
            StatsModel::Population(stats)
        }
        StatsSource::PerPatient => StatsModel::PerPatient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZScore {
    pub value: f64,
    /// Set when std is 0; the score is then pinned to 0.
    pub degenerate: bool,
}

pub fn zscore(value: f64, stat: &FeatureStat) -> ZScore {
    if stat.std == 0.0 {
        ZScore {
            value: 0.0,
            degenerate: true,
        }
    } else {
        ZScore {
            value: (value - stat.mean) / stat.std,
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionSource {
    Timeseries,
    Note,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: String,
    pub source: MentionSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zscore: Option<f64>,
}

impl EntityMention {
    pub fn note(surface: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            source: MentionSource::Note,
            direction: None,
            feature_index: None,
            zscore: None,
        }
    }

    pub fn timeseries(feature_name: &str, feature_index: usize, zscore: f64) -> Self {
        let direction = if zscore > 0.0 {
            Direction::High
        } else {
            Direction::Low
        };
        Self {
            surface: abnormal_phrase(feature_name, direction),
            source: MentionSource::Timeseries,
            direction: Some(direction),
            feature_index: Some(feature_index),
            zscore: Some(zscore),
        }
    }
}

pub fn abnormal_phrase(feature_name: &str, direction: Direction) -> String {
    match direction {
        Direction::High => format!("{feature_name} too high"),
        Direction::Low => format!("{feature_name} too low"),
    }
}

/// One mention per numeric feature whose extremal |z| over non-missing
/// visits reaches `epsilon`. The mention carries that extremal z-score (first
/// visit wins on exact ties). Categorical features are skipped.
pub fn extract_ts_entities(
    ts: &TimeSeriesMatrix,
    stats: &FeatureStats,
    epsilon: f64,
) -> Result<Vec<EntityMention>, TsError> {
    if !(epsilon > 0.0) {
        return Err(TsError::Epsilon(epsilon));
    }
    if stats.len() != ts.feature_count() {
        return Err(TsError::FeatureMismatch {
            stats: stats.len(),
            series: ts.feature_count(),
        });
    }
    let mut out = Vec::new();
    for spec in ts.features() {
        if spec.kind == FeatureKind::Categorical {
            tracing::trace!(feature = %spec.name, "categorical feature exempt from z-scoring");
            continue;
        }
        let Some(stat) = stats.get(spec.index) else {
            continue;
        };
        let extreme = ts
            .column(spec.index)
            .map(|(_, v)| zscore(v, stat).value)
            .fold(None::<f64>, |best, z| match best {
                Some(b) if b.abs() >= z.abs() => Some(b),
                _ => Some(z),
            });
        if let Some(z) = extreme {
            if z.abs() >= epsilon {
                out.push(EntityMention::timeseries(&spec.name, spec.index, z));
            }
        }
    }
    Ok(out)
}
