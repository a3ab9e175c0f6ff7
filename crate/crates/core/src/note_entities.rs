//! Disease-entity extraction from clinical notes through a chat model,
//! followed by refinement: drop entities absent from the note, keep only
//! those the model confirms as diseases, and deduplicate. Extraction and
//! refinement repeat until the accepted set stops changing.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr::note::squeeze;
use crate::ehr::ClinicalNote;
use crate::gateway::{Gateway, GatewayError};
use crate::prompt::{
    PromptTemplate, TemplateError, EXTRACT_ENTITIES_V1, EXTRACT_EXAMPLE_V1, EXTRACT_INSTRUCTION_V1,
    TYPE_FILTER_V1,
};

pub const DEFAULT_MAX_ROUNDS: usize = 3;

#[derive(Debug, Error)]
pub enum NoteError {
    #[error("extraction round {round}: {source}")]
    Extract {
        round: usize,
        #[source]
        source: GatewayError,
    },
    #[error("type filter failed: {0}")]
    Filter(#[source] GatewayError),
    #[error("cannot extract entities from an empty note")]
    EmptyNote,
    #[error("max_rounds must be at least 1")]
    MaxRounds,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionPrompt {
    pub template: PromptTemplate,
    pub example_block: String,
    pub instruction_block: String,
}

impl Default for ExtractionPrompt {
    fn default() -> Self {
        Self {
            template: PromptTemplate::new("extract_entities", "v1", EXTRACT_ENTITIES_V1),
            example_block: EXTRACT_EXAMPLE_V1.trim_end().to_string(),
            instruction_block: EXTRACT_INSTRUCTION_V1.trim_end().to_string(),
        }
    }
}

impl ExtractionPrompt {
    pub fn version(&self) -> &str {
        &self.template.version
    }

    pub fn render(&self, note: &ClinicalNote) -> Result<String, TemplateError> {
        self.template.render(&[
            ("example_block", &self.example_block),
            ("instruction_block", &self.instruction_block),
            ("note_text", &note.text),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRound {
    pub raw_llm_output: String,
    pub parsed: BTreeSet<String>,
    pub accepted_after_refine: BTreeSet<String>,
    /// The reply could not be read as an entity list.
    pub unparseable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExtractionTrace {
    pub rounds: Vec<ExtractionRound>,
    pub converged: bool,
    pub total_rounds: usize,
}

/// Lowercased surface with punctuation folded the same way as note text.
pub fn canonical_entity(surface: &str) -> String {
    squeeze(surface)
}

fn strip_bullet(item: &str) -> &str {
    let item = item.trim();
    let item = item.trim_start_matches(['-', '*', '•', '·']).trim_start();
    // "1." / "2)" enumerations
    let digits = item.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &item[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    item
}

fn is_none_reply(s: &str) -> bool {
    matches!(
        s.trim().trim_end_matches('.').to_lowercase().as_str(),
        "none" | "n/a" | "no diseases" | "nil"
    )
}

/// Reads a comma- or newline-delimited entity list. Returns `None` when the
/// reply is prose rather than a list (for example "No diseases found.").
pub fn parse_entity_list(reply: &str) -> Option<BTreeSet<String>> {
    let reply = reply.trim();
    if reply.is_empty() {
        return None;
    }
    if is_none_reply(reply) {
        return Some(BTreeSet::new());
    }
    let delimited = reply.contains(',') || reply.contains('\n');
    if !delimited {
        let words = reply.split_whitespace().count();
        let sentence = reply.ends_with(['.', '!', '?']) && words >= 3;
        if sentence || words > 6 {
            return None;
        }
    }
    Some(
        reply
            .split([',', '\n'])
            .map(strip_bullet)
            .filter(|s| !is_none_reply(s))
            .map(canonical_entity)
            .filter(|s| !s.is_empty())
            .collect(),
    )
}

/// Reads `<candidate>: yes|no` verdict lines; returns confirmed candidates.
fn parse_verdicts(reply: &str) -> BTreeSet<String> {
    reply
        .lines()
        .filter_map(|line| {
            let (name, verdict) = line.rsplit_once(':')?;
            let verdict = verdict.trim().to_lowercase();
            verdict
                .starts_with("yes")
                .then(|| canonical_entity(strip_bullet(name)))
        })
        .collect()
}

pub struct NoteEntityExtractor<'a> {
    gateway: &'a Gateway,
    extract_profile: String,
    filter_profile: String,
    prompt: ExtractionPrompt,
    filter_prompt: PromptTemplate,
}

impl<'a> NoteEntityExtractor<'a> {
    /// Extraction and type filtering both go through `profile`.
    pub fn new(gateway: &'a Gateway, profile: impl Into<String>) -> Self {
        let profile = profile.into();
        Self {
            gateway,
            extract_profile: profile.clone(),
            filter_profile: profile,
            prompt: ExtractionPrompt::default(),
            filter_prompt: PromptTemplate::new("type_filter", "v1", TYPE_FILTER_V1),
        }
    }

    pub fn with_filter_profile(mut self, profile: impl Into<String>) -> Self {
        self.filter_profile = profile.into();
        self
    }

    pub fn with_prompt(mut self, prompt: ExtractionPrompt) -> Self {
        self.prompt = prompt;
        self
    }

    /// One extraction call. Returns the raw reply and the parsed set (`None`
    /// when unparseable).
    fn raw_round(
        &self,
        note: &ClinicalNote,
        round: usize,
    ) -> Result<(String, Option<BTreeSet<String>>), NoteError> {
        if note.is_empty() {
            return Err(NoteError::EmptyNote);
        }
        let prompt = self.prompt.render(note)?;
        let reply = self
            .gateway
            .complete(&self.extract_profile, &prompt)
            .map_err(|source| NoteError::Extract { round, source })?;
        let parsed = parse_entity_list(&reply.text);
        Ok((reply.text, parsed))
    }

    pub fn extract_round(&self, note: &ClinicalNote) -> Result<BTreeSet<String>, NoteError> {
        Ok(self.raw_round(note, 1)?.1.unwrap_or_default())
    }

    pub fn refine(
        &self,
        entities: &BTreeSet<String>,
        note: &ClinicalNote,
    ) -> Result<BTreeSet<String>, NoteError> {
        // step 1: must occur in the note
        let present: Vec<String> = entities
            .iter()
            .map(|e| canonical_entity(e))
            .filter(|e| !e.is_empty() && note.text.contains(e.as_str()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if present.is_empty() {
            return Ok(BTreeSet::new());
        }
        // step 2: model confirms disease type
        let candidates = present
            .iter()
            .map(|e| format!("- {e}"))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = self.filter_prompt.render(&[("candidates", &candidates)])?;
        let reply = self
            .gateway
            .complete(&self.filter_profile, &prompt)
            .map_err(NoteError::Filter)?;
        let confirmed = parse_verdicts(&reply.text);
        // step 3: exact duplicates collapse in the set
        Ok(present
            .into_iter()
            .filter(|e| confirmed.contains(e))
            .collect())
    }

    pub fn extract(
        &self,
        note: &ClinicalNote,
        max_rounds: usize,
    ) -> Result<(BTreeSet<String>, ExtractionTrace), NoteError> {
        if max_rounds == 0 {
            return Err(NoteError::MaxRounds);
        }
        if note.is_empty() {
            return Ok((
                BTreeSet::new(),
                ExtractionTrace {
                    rounds: Vec::new(),
                    converged: true,
                    total_rounds: 1,
                },
            ));
        }
        let mut accepted = BTreeSet::new();
        let mut trace = ExtractionTrace::default();
        for round in 1..=max_rounds {
            let (raw, parsed) = self.raw_round(note, round)?;
            let unparseable = parsed.is_none();
            let parsed = parsed.unwrap_or_default();
            let union: BTreeSet<String> = accepted.union(&parsed).cloned().collect();
            let refined = self.refine(&union, note)?;
            let converged = round > 1 && refined == accepted;
            trace.rounds.push(ExtractionRound {
                raw_llm_output: raw,
                parsed,
                accepted_after_refine: refined.clone(),
                unparseable,
            });
            trace.total_rounds = round;
            accepted = refined;
            if converged {
                trace.converged = true;
                break;
            }
        }
        Ok((accepted, trace))
    }
}

pub fn extract_note_entities(
    note: &ClinicalNote,
    gateway: &Gateway,
    profile: &str,
    max_rounds: usize,
) -> Result<(BTreeSet<String>, ExtractionTrace), NoteError> {
    NoteEntityExtractor::new(gateway, profile).extract(note, max_rounds)
}
