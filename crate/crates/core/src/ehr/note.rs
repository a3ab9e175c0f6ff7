use regex::Regex;

use super::{ClinicalNote, EhrError};

/// MIMIC-style de-identification markers, e.g. `[**Known lastname 123**]`.
pub const DEFAULT_PLACEHOLDER_PATTERNS: &[&str] = &[r"\[\*\*.*?\*\*\]"];

/// Removes placeholders, replaces punctuation with spaces, lowercases and
/// squeezes whitespace. Output length (in chars) never exceeds input length.
#[derive(Debug, Clone)]
pub struct NoteNormalizer {
    patterns: Vec<Regex>,
}

impl Default for NoteNormalizer {
    fn default() -> Self {
        Self::new(DEFAULT_PLACEHOLDER_PATTERNS).expect("default patterns compile")
    }
}

impl NoteNormalizer {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, EhrError> {
        let patterns = patterns
            .iter()
            .map(|p| Regex::new(p.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { patterns })
    }

    pub fn normalize(&self, raw: &str) -> ClinicalNote {
        let mut text = raw.to_string();
        for re in &self.patterns {
            // replace with a space so words on either side stay separate
            text = re.replace_all(&text, " ").into_owned();
        }
        ClinicalNote {
            text: squeeze(&text),
            raw_length: raw.chars().count(),
        }
    }
}

/// Punctuation and whitespace folding shared by notes and entity surfaces.
pub(crate) fn squeeze(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            // one char in, one char out: keeps the length bound and idempotence
            out.push(c.to_lowercase().next().unwrap_or(c));
        } else {
            pending_space = true;
        }
    }
    out
}

pub fn normalize_note<S: AsRef<str>>(
    raw: &str,
    placeholder_patterns: &[S],
) -> Result<ClinicalNote, EhrError> {
    Ok(NoteNormalizer::new(placeholder_patterns)?.normalize(raw))
}
