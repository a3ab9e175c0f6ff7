use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ClinicalNote, EhrError, FeatureSpec, NoteNormalizer, PatientRecord, TimeSeriesMatrix,
    MAX_VISITS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PatientFormat {
    #[default]
    Jsonl,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub format: PatientFormat,
    pub max_visits: usize,
    pub normalizer: NoteNormalizer,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            format: PatientFormat::Jsonl,
            max_visits: MAX_VISITS,
            normalizer: NoteNormalizer::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadWarning {
    Truncated {
        id: String,
        line: usize,
        visits: usize,
        kept: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub records: Vec<PatientRecord>,
    pub warnings: Vec<LoadWarning>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientLine {
    id: String,
    features: Vec<FeatureSpec>,
    values: Vec<Vec<Option<f64>>>,
    note: String,
    label_mortality: u8,
    label_readmission: u8,
}

pub fn load_patients(path: &Path, opts: &LoadOptions) -> Result<Loaded, EhrError> {
    let file = File::open(path).map_err(|source| EhrError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_patients(BufReader::new(file), opts)
}

pub fn read_patients<R: Read>(reader: R, opts: &LoadOptions) -> Result<Loaded, EhrError> {
    let PatientFormat::Jsonl = opts.format;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| EhrError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PatientLine = serde_json::from_str(&line).map_err(|e| EhrError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        for (field, v) in [
            ("label_mortality", parsed.label_mortality),
            ("label_readmission", parsed.label_readmission),
        ] {
            if v > 1 {
                return Err(EhrError::Parse {
                    line: line_no,
                    message: format!("{field} must be 0 or 1, found {v}"),
                });
            }
        }
        if !ids.insert(parsed.id.clone()) {
            return Err(EhrError::DuplicateId {
                id: parsed.id,
                line: line_no,
            });
        }
        let mut ts =
            TimeSeriesMatrix::new(parsed.values, parsed.features).map_err(|e| EhrError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if ts.visit_count() > opts.max_visits {
            let visits = ts.visit_count();
            ts.truncate(opts.max_visits);
            tracing::warn!(patient_id = %parsed.id, line = line_no, visits, kept = opts.max_visits, "truncated visits");
            warnings.push(LoadWarning::Truncated {
                id: parsed.id.clone(),
                line: line_no,
                visits,
                kept: opts.max_visits,
            });
        }
        records.push(PatientRecord {
            id: parsed.id,
            ts,
            note: opts.normalizer.normalize(&parsed.note),
            label_mortality: parsed.label_mortality,
            label_readmission: parsed.label_readmission,
        });
    }
    Ok(Loaded { records, warnings })
}

fn to_line(p: &PatientRecord) -> PatientLine {
    PatientLine {
        id: p.id.clone(),
        features: p.ts.features().to_vec(),
        values: p.ts.rows().to_vec(),
        note: p.note.text.clone(),
        label_mortality: p.label_mortality,
        label_readmission: p.label_readmission,
    }
}

pub fn write_patients<W: Write>(writer: W, patients: &[PatientRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for p in patients {
        serde_json::to_writer(&mut w, &to_line(p))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

impl ClinicalNote {
    /// Wraps text that is already normalized.
    pub fn from_normalized(text: impl Into<String>) -> Self {
        let text = text.into();
        let raw_length = text.chars().count();
        Self { text, raw_length }
    }
}
