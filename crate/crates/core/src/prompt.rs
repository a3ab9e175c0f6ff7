//! Versioned prompt templates with `{slot}` placeholders.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template {template}: no value for slot {{{slot}}}")]
    MissingSlot { template: String, slot: String },
    #[error("template {template}: unused value for slot {{{slot}}}")]
    UnusedSlot { template: String, slot: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub version: String,
    pub text: String,
}

pub const EXTRACT_ENTITIES_V1: &str = include_str!("../prompts/extract_entities.v1.txt");
pub const EXTRACT_INSTRUCTION_V1: &str = include_str!("../prompts/extract_instruction.v1.txt");
pub const EXTRACT_EXAMPLE_V1: &str = include_str!("../prompts/extract_example.v1.txt");
pub const TYPE_FILTER_V1: &str = include_str!("../prompts/type_filter.v1.txt");
pub const SUMMARY_V1: &str = include_str!("../prompts/summary.v1.txt");

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        version: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            version: version.into(),
            text: text.into(),
        }
    }

    pub fn load(path: &std::path::Path, name: &str, version: &str) -> std::io::Result<Self> {
        Ok(Self::new(name, version, std::fs::read_to_string(path)?))
    }

    /// Slot names in order of first appearance.
    pub fn slots(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for (_, name, _) in placeholders(&self.text) {
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    /// Single-pass substitution: slot values are never re-scanned, so a
    /// value containing `{x}` is inserted literally.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let map: BTreeMap<&str, &str> = values.iter().copied().collect();
        let mut used = std::collections::BTreeSet::new();
        let mut out = String::with_capacity(
            self.text.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>(),
        );
        let mut last = 0;
        for (start, name, end) in placeholders(&self.text) {
            let value = map.get(name).ok_or_else(|| TemplateError::MissingSlot {
                template: self.name.clone(),
                slot: name.to_string(),
            })?;
            out.push_str(&self.text[last..start]);
            out.push_str(value);
            used.insert(name);
            last = end;
        }
        out.push_str(&self.text[last..]);
        if let Some(slot) = map.keys().find(|k| !used.contains(*k)) {
            return Err(TemplateError::UnusedSlot {
                template: self.name.clone(),
                slot: slot.to_string(),
            });
        }
        Ok(out)
    }
}

/// `(start, name, end)` for every `{name}` with `name` in `[a-z_]+`.
fn placeholders(text: &str) -> Vec<(usize, &str, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                out.push((i, &text[i + 1..j], j + 1));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}
