//! Synthetic cohort generator with planted, label-dependent evidence in both
//! the lab time series and the clinical notes, plus a matching miniature KG.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    normalize_note, ClinicalNote, EhrError, FeatureKind, FeatureSpec, PatientRecord,
    TimeSeriesMatrix, DEFAULT_PLACEHOLDER_PATTERNS, MAX_VISITS,
};
use crate::kg::{KgEdge, KgNode, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub n_features: usize,
    pub n_visits: usize,
    pub positive_rate: f64,
    /// 0 makes labels independent of the data; 1 makes evidence nearly
    /// deterministic given the label.
    pub signal_strength: f64,
    /// The first half signals mortality, the second half readmission.
    pub disease_vocab: Vec<String>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_patients: 2000,
            n_features: 17,
            n_visits: 24,
            positive_rate: 0.3,
            signal_strength: 0.8,
            disease_vocab: [
                "sepsis",
                "acute kidney injury",
                "pneumonia",
                "respiratory failure",
                "cirrhosis",
                "heart failure",
                "copd",
                "diabetes mellitus",
                "atrial fibrillation",
                "chronic kidney disease",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), EhrError> {
        let bad = |m: String| Err(EhrError::Validation(m));
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return bad(format!(
                "signal_strength must lie in [0, 1], got {}",
                self.signal_strength
            ));
        }
        if !(0.0..=1.0).contains(&self.positive_rate) {
            return bad(format!(
                "positive_rate must lie in [0, 1], got {}",
                self.positive_rate
            ));
        }
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if self.n_features < 2 {
            return bad("n_features must be at least 2".into());
        }
        if self.n_visits == 0 || self.n_visits > MAX_VISITS {
            return bad(format!("n_visits must lie in 1..={MAX_VISITS}"));
        }
        if self.disease_vocab.len() < 2 {
            return bad("disease_vocab needs at least two diseases".into());
        }
        Ok(())
    }

    fn mortality_diseases(&self) -> &[String] {
        &self.disease_vocab[..self.disease_vocab.len() / 2]
    }

    fn readmission_diseases(&self) -> &[String] {
        &self.disease_vocab[self.disease_vocab.len() / 2..]
    }
}

#[derive(Debug, Clone, Copy)]
enum Dist {
    Normal { mean: f64, sd: f64 },
    Codes { lo: i64, hi: i64 },
}

const LABS: &[(&str, Dist)] = &[
    (
        "fraction inspired oxygen",
        Dist::Normal {
            mean: 0.4,
            sd: 0.08,
        },
    ),
    (
        "systolic blood pressure",
        Dist::Normal {
            mean: 120.0,
            sd: 15.0,
        },
    ),
    (
        "heart rate",
        Dist::Normal {
            mean: 85.0,
            sd: 12.0,
        },
    ),
    (
        "respiratory rate",
        Dist::Normal {
            mean: 18.0,
            sd: 4.0,
        },
    ),
    (
        "temperature",
        Dist::Normal {
            mean: 37.0,
            sd: 0.5,
        },
    ),
    (
        "oxygen saturation",
        Dist::Normal {
            mean: 97.0,
            sd: 2.0,
        },
    ),
    (
        "diastolic blood pressure",
        Dist::Normal {
            mean: 65.0,
            sd: 10.0,
        },
    ),
    (
        "mean blood pressure",
        Dist::Normal {
            mean: 80.0,
            sd: 10.0,
        },
    ),
    (
        "glucose",
        Dist::Normal {
            mean: 130.0,
            sd: 30.0,
        },
    ),
    (
        "ph",
        Dist::Normal {
            mean: 7.4,
            sd: 0.05,
        },
    ),
    ("capillary refill rate", Dist::Codes { lo: 0, hi: 1 }),
    (
        "glascow coma scale eye opening",
        Dist::Codes { lo: 1, hi: 4 },
    ),
    (
        "glascow coma scale motor response",
        Dist::Codes { lo: 1, hi: 6 },
    ),
    (
        "glascow coma scale verbal response",
        Dist::Codes { lo: 1, hi: 5 },
    ),
    ("glascow coma scale total", Dist::Codes { lo: 3, hi: 15 }),
];
const AGE: (&str, Dist) = (
    "age",
    Dist::Normal {
        mean: 65.0,
        sd: 15.0,
    },
);
const GENDER: (&str, Dist) = ("gender", Dist::Codes { lo: 0, hi: 1 });

const MORTALITY_FEATURE: usize = 0;
const READMISSION_FEATURE: usize = 1;
const MISSING_RATE: f64 = 0.1;
const EXCURSION_SD: f64 = 4.0;

const DISTRACTORS: &[&str] = &[
    "hypertension",
    "hyperlipidemia",
    "anemia",
    "hypothyroidism",
    "osteoarthritis",
    "gastroesophageal reflux",
];
const BENIGN: &[&str] = &[
    "mild headache",
    "seasonal allergies",
    "lower back pain",
    "insomnia",
    "dry skin",
];
const FILLER: &[&str] = &[
    "Patient [**Name**] was admitted from [**Hospital 1234**] on [**2101-3-4**].",
    "Vital signs were reviewed overnight by the team.",
    "Family at bedside, updated by Dr. [**Last Name**].",
    "Continue current medications and monitor intake and output.",
    "Labs drawn this morning; results pending.",
    "Patient resting comfortably, no acute distress noted.",
    "Plan discussed with attending physician.",
    "Will reassess in the morning.",
    "Nutrition consult placed.",
    "Lines and drains checked, dressing clean and dry.",
];

fn features(n: usize) -> Vec<(String, Dist)> {
    let labs = if n >= 4 { n - 2 } else { n };
    let mut out: Vec<(String, Dist)> = (0..labs)
        .map(|i| match LABS.get(i) {
            Some((name, d)) => (name.to_string(), *d),
            None => (
                format!("marker {}", i - LABS.len() + 1),
                Dist::Normal {
                    mean: 10.0,
                    sd: 2.0,
                },
            ),
        })
        .collect();
    if n >= 4 {
        out.push((AGE.0.into(), AGE.1));
        out.push((GENDER.0.into(), GENDER.1));
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

struct Patient {
    values: Vec<Vec<Option<f64>>>,
    note: String,
    mortality: u8,
    readmission: u8,
}

fn gen_patient(cfg: &SyntheticConfig, feats: &[(String, Dist)], rng: &mut ChaCha8Rng) -> Patient {
    let mortality = u8::from(rng.gen_bool(cfg.positive_rate));
    let readmission = u8::from(rng.gen_bool(cfg.positive_rate));
    // evidence probability given the label
    let q = |y: u8| {
        if y == 1 {
            0.5 + 0.45 * cfg.signal_strength
        } else {
            0.5 - 0.45 * cfg.signal_strength
        }
    };
    let ts_mort = rng.gen_bool(q(mortality));
    let ts_readm = rng.gen_bool(q(readmission));
    let note_mort = rng.gen_bool(q(mortality));
    let note_readm = rng.gen_bool(q(readmission));

    let t_len = rng.gen_range((cfg.n_visits / 2).max(1)..=cfg.n_visits);
    let onset = t_len - (t_len / 3).max(1);
    let statics = feats.len() >= 4;
    let mut values = vec![vec![None; feats.len()]; t_len];
    for (f, (_, dist)) in feats.iter().enumerate() {
        let is_static = statics && f >= feats.len() - 2;
        match *dist {
            Dist::Normal { mean, sd } => {
                let offset = 0.9 * normal(rng);
                for (t, row) in values.iter_mut().enumerate() {
                    let excursion = (f == MORTALITY_FEATURE && ts_mort)
                        || (f == READMISSION_FEATURE && ts_readm);
                    if excursion && t >= onset {
                        let sign = if f == MORTALITY_FEATURE { 1.0 } else { -1.0 };
                        row[f] = Some(mean + sign * sd * (EXCURSION_SD + 0.3 * normal(rng)));
                        continue;
                    }
                    if !is_static && rng.gen_bool(MISSING_RATE) {
                        continue;
                    }
                    let noise = if is_static { 0.0 } else { 0.3 * normal(rng) };
                    row[f] = Some(mean + sd * (offset + noise));
                }
            }
            Dist::Codes { lo, hi } => {
                let base = rng.gen_range(lo..=hi);
                for row in values.iter_mut() {
                    if !is_static && rng.gen_bool(MISSING_RATE) {
                        continue;
                    }
                    let code = if !is_static && rng.gen_bool(0.2) {
                        rng.gen_range(lo..=hi)
                    } else {
                        base
                    };
                    row[f] = Some(code as f64);
                }
            }
        }
    }
    if values.iter().all(|r| r.iter().all(Option::is_none)) {
        values[0][feats.len() - 1] = Some(0.0);
    }

    let mut sentences: Vec<String> = FILLER
        .choose_multiple(rng, 4)
        .map(|s| s.to_string())
        .collect();
    let mention = |pool: &[String], rng: &mut ChaCha8Rng, sentences: &mut Vec<String>| {
        let n = rng.gen_range(1..=2.min(pool.len()));
        for d in pool.choose_multiple(rng, n) {
            let surface = if rng.gen_bool(0.5) {
                capitalize(d)
            } else {
                d.clone()
            };
            sentences.push(format!("Assessment notable for {surface}."));
        }
    };
    if note_mort {
        mention(cfg.mortality_diseases(), rng, &mut sentences);
    }
    if note_readm {
        mention(cfg.readmission_diseases(), rng, &mut sentences);
    }
    let n_distractors = rng.gen_range(0..=2);
    for d in DISTRACTORS.choose_multiple(rng, n_distractors) {
        sentences.push(format!("History of {d}."));
    }
    if rng.gen_bool(0.5) {
        sentences.push(format!("Reports {}.", BENIGN.choose(rng).unwrap()));
    }
    sentences.shuffle(rng);
    Patient {
        values,
        note: sentences.join(" "),
        mortality,
        readmission,
    }
}

fn build_kg(
    cfg: &SyntheticConfig,
    feats: &[(String, Dist)],
    rng: &mut ChaCha8Rng,
) -> Result<KnowledgeGraph, EhrError> {
    let mut nodes = Vec::new();
    let mut push = |name: String, definition: String, description: String| {
        let id = nodes.len() as u64;
        nodes.push(KgNode {
            id,
            name,
            definition,
            description,
        });
        id
    };
    let mort: Vec<u64> = cfg
        .mortality_diseases()
        .iter()
        .map(|d| {
            push(
                d.clone(),
                format!("{d} is an acute disorder."),
                "It is frequently seen in critical illness and carries a high risk of death."
                    .into(),
            )
        })
        .collect();
    let readm: Vec<u64> = cfg
        .readmission_diseases()
        .iter()
        .map(|d| {
            push(
                d.clone(),
                format!("{d} is a chronic disorder."),
                "It often leads to repeat hospital admissions.".into(),
            )
        })
        .collect();
    let distractors: Vec<u64> = DISTRACTORS
        .iter()
        .map(|d| {
            push(
                d.to_string(),
                format!("{d} is a common condition."),
                String::new(),
            )
        })
        .collect();
    let mut phenotypes = Vec::new();
    for (name, dist) in feats {
        if let Dist::Normal { .. } = dist {
            for dir in ["high", "low"] {
                phenotypes.push(push(
                    format!("{dir} {name}"),
                    format!("{name} above or below the normal range."),
                    String::new(),
                ));
            }
        }
    }

    let mut edges = Vec::new();
    let hi_mort = phenotypes[2 * MORTALITY_FEATURE];
    let lo_readm = phenotypes.get(2 * READMISSION_FEATURE + 1).copied();
    for &d in &mort {
        edges.push(KgEdge {
            head: d,
            relation: "phenotype present".into(),
            tail: hi_mort,
        });
    }
    if let Some(p) = lo_readm {
        for &d in &readm {
            edges.push(KgEdge {
                head: d,
                relation: "phenotype present".into(),
                tail: p,
            });
        }
    }
    let diseases: Vec<u64> = mort
        .iter()
        .chain(&readm)
        .chain(&distractors)
        .copied()
        .collect();
    let relations = ["associated with", "risk factor for", "comorbid with"];
    for _ in 0..diseases.len() * 2 {
        let (a, b) = (
            *diseases.choose(rng).unwrap(),
            *diseases.choose(rng).unwrap(),
        );
        if a != b {
            let relation = relations.choose(rng).unwrap().to_string();
            edges.push(KgEdge {
                head: a,
                relation,
                tail: b,
            });
        }
    }
    KnowledgeGraph::new(nodes, edges).map_err(|e| EhrError::Validation(e.to_string()))
}

/// Generates `config.n_patients` records (ids `p00000`, ...) and a KG
/// containing every vocabulary disease, distractor diseases and
/// abnormal-lab phenotype nodes. Deterministic in `seed`.
pub fn generate_synthetic_cohort(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(Vec<PatientRecord>, KnowledgeGraph), EhrError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feats = features(config.n_features);
    let specs: Vec<FeatureSpec> = feats
        .iter()
        .enumerate()
        .map(|(i, (name, d))| {
            let kind = match d {
                Dist::Normal { .. } => FeatureKind::Numeric,
                Dist::Codes { .. } => FeatureKind::Categorical,
            };
            FeatureSpec::new(i, name.clone(), kind)
        })
        .collect();
    let kg = build_kg(config, &feats, &mut rng)?;
    let mut records = Vec::with_capacity(config.n_patients);
    for i in 0..config.n_patients {
        let p = gen_patient(config, &feats, &mut rng);
        let note: ClinicalNote = normalize_note(&p.note, DEFAULT_PLACEHOLDER_PATTERNS)?;
        records.push(PatientRecord {
            id: format!("p{i:05}"),
            ts: TimeSeriesMatrix::new(p.values, specs.clone())?,
            note,
            label_mortality: p.mortality,
            label_readmission: p.readmission,
        });
    }
    Ok((records, kg))
}
