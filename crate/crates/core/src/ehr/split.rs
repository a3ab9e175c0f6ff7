use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EhrError, PatientRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CohortSplit {
    pub train: Vec<PatientRecord>,
    pub val: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
    pub seed: u64,
}

impl CohortSplit {
    pub fn ids(part: &[PatientRecord]) -> Vec<String> {
        part.iter().map(|p| p.id.clone()).collect()
    }
}

/// Split sizes for `n` patients; every part gets at least one patient.
pub(crate) fn split_sizes(n: usize, ratios: SplitRatios) -> (usize, usize, usize) {
    let val = ((ratios.val * n as f64).round() as usize).max(1);
    let test = ((ratios.test * n as f64).round() as usize).max(1);
    (n - val - test, val, test)
}

/// Shuffles the cohort with a seeded permutation and cuts it into
/// patient-level train/validation/test parts.
pub fn split_cohort(
    cohort: &[PatientRecord],
    ratios: SplitRatios,
    seed: u64,
) -> Result<CohortSplit, EhrError> {
    if cohort.len() < 3 {
        return Err(EhrError::Validation(format!(
            "cohort of {} patients cannot form three non-empty splits",
            cohort.len()
        )));
    }
    let parts = [ratios.train, ratios.val, ratios.test];
    if parts.iter().any(|r| !(*r > 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
        return Err(EhrError::Validation(format!(
            "split ratios {parts:?} must be positive and sum to 1"
        )));
    }
    let (n_train, n_val, _) = split_sizes(cohort.len(), ratios);
    let mut order: Vec<usize> = (0..cohort.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| cohort[i].clone()).collect::<Vec<_>>();
    Ok(CohortSplit {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{ClinicalNote, FeatureKind, FeatureSpec, TimeSeriesMatrix};
    use std::collections::HashSet;

    fn cohort(n: usize) -> Vec<PatientRecord> {
        let features = vec![FeatureSpec::new(0, "x", FeatureKind::Numeric)];
        (0..n)
            .map(|i| PatientRecord {
                id: format!("p{i}"),
                ts: TimeSeriesMatrix::new(vec![vec![Some(i as f64)]], features.clone()).unwrap(),
                note: ClinicalNote::from_normalized(""),
                label_mortality: (i % 2) as u8,
                label_readmission: 0,
            })
            .collect()
    }

    #[test]
    fn ten_patients_split_seven_one_two() {
        let s = split_cohort(&cohort(10), SplitRatios::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
    }

    #[test]
    fn deterministic_for_seed() {
        let c = cohort(50);
        let a = split_cohort(&c, SplitRatios::default(), 3).unwrap();
        let b = split_cohort(&c, SplitRatios::default(), 3).unwrap();
        assert_eq!(CohortSplit::ids(&a.train), CohortSplit::ids(&b.train));
        assert_eq!(CohortSplit::ids(&a.test), CohortSplit::ids(&b.test));
    }

    #[test]
    fn large_cohort_sizes_match_counting() {
        let n = 10_000;
        let s = split_cohort(&cohort(n), SplitRatios::default(), 11).unwrap();
        // counting oracle: 70/10/20 of 10,000
        let expected = (n * 7 / 10, n / 10, n * 2 / 10);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), expected);
    }

    #[test]
    fn too_small_cohort_rejected() {
        assert!(split_cohort(&cohort(2), SplitRatios::default(), 1).is_err());
        let s = split_cohort(&cohort(3), SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 1));
    }

    #[test]
    fn partitions_for_many_seeds() {
        let c = cohort(37);
        for seed in 0..100 {
            let s = split_cohort(&c, SplitRatios::default(), seed).unwrap();
            let parts = [&s.train, &s.val, &s.test]
                .map(|p| CohortSplit::ids(p).into_iter().collect::<HashSet<_>>());
            assert!(parts[0].is_disjoint(&parts[1]));
            assert!(parts[0].is_disjoint(&parts[2]));
            assert!(parts[1].is_disjoint(&parts[2]));
            let total: HashSet<_> = parts.iter().flatten().cloned().collect();
            assert_eq!(total.len(), 37);
            for (got, ratio) in [
                (s.train.len(), 0.7),
                (s.val.len(), 0.1),
                (s.test.len(), 0.2),
            ] {
                assert!((got as f64 - ratio * 37.0).abs() <= 1.0);
            }
        }
    }
}
