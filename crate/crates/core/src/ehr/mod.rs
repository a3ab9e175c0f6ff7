//! Patient data model, ingestion, cohort splitting and the synthetic cohort
//! generator.

mod consolidate;
mod io;
pub(crate) mod note;
mod split;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use consolidate::{consolidate, Event};
pub use io::{
    load_patients, read_patients, write_patients, LoadOptions, LoadWarning, Loaded, PatientFormat,
};
pub use note::{normalize_note, NoteNormalizer, DEFAULT_PLACEHOLDER_PATTERNS};
pub use split::{split_cohort, CohortSplit, SplitRatios};
pub use synth::{generate_synthetic_cohort, SyntheticConfig};

/// Default cap on the number of visits kept per patient.
pub const MAX_VISITS: usize = 48;

#[derive(Debug, Error)]
pub enum EhrError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate patient id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invalid placeholder pattern: {0}")]
    Pattern(#[from] regex::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub index: usize,
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn new(index: usize, name: impl Into<String>, kind: FeatureKind) -> Self {
        Self {
            index,
            name: name.into(),
            kind,
        }
    }
}

/// Checks that feature indices are `0..F-1` in order and names are unique.
pub fn validate_features(features: &[FeatureSpec]) -> Result<(), EhrError> {
    if features.is_empty() {
        return Err(EhrError::Validation(
            "at least one feature is required".into(),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    for (i, f) in features.iter().enumerate() {
        if f.index != i {
            return Err(EhrError::Validation(format!(
                "feature indices must be contiguous: expected {i}, found {}",
                f.index
            )));
        }
        if !seen.insert(f.name.as_str()) {
            return Err(EhrError::Validation(format!(
                "duplicate feature name {:?}",
                f.name
            )));
        }
    }
    Ok(())
}

/// A `T x F` grid of lab values where `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesMatrix {
    values: Vec<Vec<Option<f64>>>,
    features: Vec<FeatureSpec>,
}

impl TimeSeriesMatrix {
    pub fn new(
        values: Vec<Vec<Option<f64>>>,
        features: Vec<FeatureSpec>,
    ) -> Result<Self, EhrError> {
        validate_features(&features)?;
        if values.is_empty() {
            return Err(EhrError::Validation(
                "time series needs at least one visit".into(),
            ));
        }
        for (t, row) in values.iter().enumerate() {
            if row.len() != features.len() {
                return Err(EhrError::Validation(format!(
                    "visit {t} has {} values, expected {}",
                    row.len(),
                    features.len()
                )));
            }
            if row.iter().flatten().any(|v| !v.is_finite()) {
                return Err(EhrError::Validation(format!(
                    "visit {t} contains a non-finite value"
                )));
            }
        }
        Ok(Self { values, features })
    }

    pub fn visit_count(&self) -> usize {
        self.values.len()
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.values
    }

    pub fn get(&self, visit: usize, feature: usize) -> Option<f64> {
        self.values[visit][feature]
    }

    /// Non-missing values of one feature, in visit order.
    pub fn column(&self, feature: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(move |(t, row)| row[feature].map(|v| (t, v)))
    }

    pub(crate) fn truncate(&mut self, max_visits: usize) {
        self.values.truncate(max_visits);
    }
}

/// Normalized clinical note text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub text: String,
    pub raw_length: usize,
}

impl ClinicalNote {
    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Mortality,
    Readmission,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Mortality => f.write_str("mortality"),
            Task::Readmission => f.write_str("readmission"),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mortality" => Ok(Task::Mortality),
            "readmission" => Ok(Task::Readmission),
            other => Err(format!(
                "unknown task {other:?} (expected mortality or readmission)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub ts: TimeSeriesMatrix,
    pub note: ClinicalNote,
    pub label_mortality: u8,
    pub label_readmission: u8,
}

impl PatientRecord {
    pub fn label(&self, task: Task) -> u8 {
        match task {
            Task::Mortality => self.label_mortality,
            Task::Readmission => self.label_readmission,
        }
    }
}
