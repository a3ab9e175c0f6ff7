//! Turns patient records and text embeddings into standardized model inputs.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::ehr::{CohortSplit, PatientRecord, Task, TimeSeriesMatrix};
use crate::fusion::Sample;
use crate::ts_entities::{compute_feature_stats, zscore, FeatureStats, StatsModel, StatsSource};

/// Note and summary embeddings for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct TextInputs {
    pub note: Vec<f64>,
    pub rag: Vec<f64>,
}

/// Z-scores every observed cell against training statistics; missing cells
/// and features without usable statistics become 0.
pub fn ts_input(ts: &TimeSeriesMatrix, stats: &FeatureStats) -> Array2<f64> {
    Array2::from_shape_fn((ts.visit_count(), ts.feature_count()), |(t, f)| {
        match (ts.get(t, f), stats.get(f)) {
            (Some(v), Some(s)) => zscore(v, s).value,
            _ => 0.0,
        }
    })
}

/// Per-dimension standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0.0;
        let mut sum = Array1::<f64>::zeros(dim);
        let mut sq = Array1::<f64>::zeros(dim);
        for r in rows {
            let r = Array1::from(r.to_vec());
            sq += &(&r * &r);
            sum += &r;
            n += 1.0;
        }
        let n = f64::max(n, 1.0);
        let mean = sum / n;
        let var = (sq / n - &mean * &mean).mapv(|v| v.max(0.0));
        // constant dimensions are only centered
        let std = var.mapv(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 });
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Array1<f64> {
        (Array1::from(x.to_vec()) - &self.mean) / &self.std
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub n_features: usize,
    pub d_text: usize,
}

fn text_for<'a>(
    text: &'a HashMap<String, TextInputs>,
    id: &str,
) -> Result<&'a TextInputs, TrainError> {
    text.get(id)
        .ok_or_else(|| TrainError::Data(format!("no text embeddings for patient {id}")))
}

/// Builds standardized samples for every split; all statistics come from
/// the training split.
pub fn build_dataset(
    split: &CohortSplit,
    task: Task,
    text: &HashMap<String, TextInputs>,
) -> Result<Dataset, TrainError> {
    for (name, part) in [
        ("train", &split.train),
        ("validation", &split.val),
        ("test", &split.test),
    ] {
        if part.is_empty() {
            return Err(TrainError::EmptySplit(name));
        }
    }
    let stats = match compute_feature_stats(&split.train, StatsSource::Population)
        .map_err(|e| TrainError::Data(e.to_string()))?
    {
        StatsModel::Population(s) => s,
        StatsModel::PerPatient => unreachable!("population mode requested"),
    };
    let n_features = split.train[0].ts.feature_count();
    let d_text = text_for(text, &split.train[0].id)?.note.len();
    let train_text = split
        .train
        .iter()
        .map(|p| text_for(text, &p.id))
        .collect::<Result<Vec<_>, _>>()?;
    for t in &train_text {
        if t.note.len() != d_text || t.rag.len() != d_text {
            return Err(TrainError::Data(
                "text embeddings have inconsistent dimensions".into(),
            ));
        }
    }
    let note_scaler = Standardizer::fit(train_text.iter().map(|t| t.note.as_slice()), d_text);
    let rag_scaler = Standardizer::fit(train_text.iter().map(|t| t.rag.as_slice()), d_text);

    let make = |part: &[PatientRecord]| -> Result<Vec<Sample>, TrainError> {
        part.iter()
            .map(|p| {
                let t = text_for(text, &p.id)?;
                if p.ts.feature_count() != n_features
                    || t.note.len() != d_text
                    || t.rag.len() != d_text
                {
                    return Err(TrainError::Data(format!(
                        "patient {} does not match the cohort shape",
                        p.id
                    )));
                }
                Ok(Sample {
                    id: p.id.clone(),
                    ts: ts_input(&p.ts, &stats),
                    note: note_scaler.apply(&t.note),
                    rag: rag_scaler.apply(&t.rag),
                    label: f64::from(p.label(task)),
                })
            })
            .collect()
    };
    Ok(Dataset {
        train: make(&split.train)?,
        val: make(&split.val)?,
        test: make(&split.test)?,
        n_features,
        d_text,
    })
}

/// Stratified seeded subsample keeping `fraction` of each class (at least
/// one sample per present class). `fraction >= 1` returns the input as is.
pub fn stratified_subsample(samples: &[Sample], fraction: f64, seed: u64) -> Vec<Sample> {
    if fraction >= 1.0 {
        return samples.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for class in [0.0, 1.0] {
        let mut idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].label == class)
            .collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let k = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len());
        keep.extend_from_slice(&idx[..k]);
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| samples[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{FeatureKind, FeatureSpec};

    fn record(id: &str, rows: Vec<Vec<Option<f64>>>) -> PatientRecord {
        let features = vec![
            FeatureSpec::new(0, "a", FeatureKind::Numeric),
            FeatureSpec::new(1, "b", FeatureKind::Numeric),
        ];
        PatientRecord {
            id: id.into(),
            ts: TimeSeriesMatrix::new(rows, features).unwrap(),
            note: crate::ehr::ClinicalNote {
                text: String::new(),
                raw_length: 0,
            },
            label_mortality: 1,
            label_readmission: 0,
        }
    }

    #[test]
    fn ts_input_zscores_and_fills() {
        let train = vec![record(
            "a",
            vec![vec![Some(1.0), Some(5.0)], vec![Some(3.0), None]],
        )];
        let stats = match compute_feature_stats(&train, StatsSource::Population).unwrap() {
            StatsModel::Population(s) => s,
            _ => unreachable!(),
        };
        let x = ts_input(&train[0].ts, &stats);
        assert_eq!(x.dim(), (2, 2));
        assert_eq!(x[[0, 0]], -1.0);
        assert_eq!(x[[1, 0]], 1.0);
        // single observation: std 0 pins to 0, missing also 0
        assert_eq!(x[[0, 1]], 0.0);
        assert_eq!(x[[1, 1]], 0.0);
    }

    #[test]
    fn standardizer_uses_training_moments() {
        let rows = [vec![1.0, 2.0], vec![3.0, 2.0]];
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice()), 2);
        assert_eq!(s.apply(&[3.0, 2.0]).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn build_rejects_missing_text() {
        let recs: Vec<_> = (0..3)
            .map(|i| record(&format!("p{i}"), vec![vec![Some(1.0), Some(2.0)]]))
            .collect();
        let split = CohortSplit {
            train: vec![recs[0].clone()],
            val: vec![recs[1].clone()],
            test: vec![recs[2].clone()],
            seed: 0,
        };
        let mut text = HashMap::new();
        for r in &recs[..2] {
            text.insert(
                r.id.clone(),
                TextInputs {
                    note: vec![1.0],
                    rag: vec![2.0],
                },
            );
        }
        assert!(matches!(
            build_dataset(&split, Task::Mortality, &text),
            Err(TrainError::Data(_))
        ));
        text.insert(
            "p2".into(),
            TextInputs {
                note: vec![1.0],
                rag: vec![2.0],
            },
        );
        let d = build_dataset(&split, Task::Mortality, &text).unwrap();
        assert_eq!((d.n_features, d.d_text), (2, 1));
        assert_eq!(d.test[0].label, 1.0);
    }

    #[test]
    fn subsample_is_stratified() {
        let samples: Vec<Sample> = (0..100)
            .map(|i| Sample {
                id: format!("{i}"),
                ts: Array2::zeros((1, 1)),
                note: Array1::zeros(1),
                rag: Array1::zeros(1),
                label: if i < 30 { 1.0 } else { 0.0 },
            })
            .collect();
        let sub = stratified_subsample(&samples, 0.2, 5);
        assert_eq!(sub.iter().filter(|s| s.label == 1.0).count(), 6);
        assert_eq!(sub.len(), 20);
        assert_eq!(sub, stratified_subsample(&samples, 0.2, 5));
        let tiny = stratified_subsample(&samples, 0.01, 5);
        assert_eq!(tiny.iter().filter(|s| s.label == 1.0).count(), 1);
        assert_eq!(stratified_subsample(&samples, 1.0, 5), samples);
    }
}
