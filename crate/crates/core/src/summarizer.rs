//! Builds the summary prompt from a patient's retrieved material and asks
//! the chat model for a health-status summary. Refused generations become
//! the literal summary "None".

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::kg::{node_knowledge, sample_triples, KgError, KnowledgeGraph, MatchResult, NodeId};
use crate::prompt::{PromptTemplate, TemplateError, SUMMARY_V1};
use crate::ts_entities::{EntityMention, MentionSource};

/// Summary recorded when the model refuses or returns nothing.
pub const NONE_SUMMARY: &str = "None";
pub const DEFAULT_KNOWLEDGE_BUDGET: usize = 4000;

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("summary for {patient_id}: {source}")]
    Gateway {
        patient_id: String,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Kg(#[from] KgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementBundle {
    pub patient_id: String,
    pub abnormal_features: Vec<EntityMention>,
    pub diseases: Vec<String>,
    pub knowledge_texts: Vec<String>,
    pub triples: Vec<(String, String, String)>,
    #[serde(default)]
    pub summary: Option<String>,
}

/// Seed for a patient's triple sample, stable across runs and job counts.
pub fn patient_seed(patient_id: &str, seed: u64) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(patient_id.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Collects the bundle for one patient. Knowledge texts and triples come
/// only from matched nodes, in order of first match.
pub fn assemble_bundle(
    patient_id: &str,
    ts_mentions: &[EntityMention],
    note_entities: &[String],
    matches: &[MatchResult],
    kg: &KnowledgeGraph,
    n_triples: usize,
    seed: u64,
) -> Result<EnhancementBundle, KgError> {
    let mut seen = BTreeSet::new();
    let nodes: Vec<NodeId> = matches
        .iter()
        .flat_map(|m| m.matched_nodes.iter().copied())
        .filter(|id| seen.insert(*id))
        .collect();
    let knowledge_texts = nodes
        .iter()
        .map(|&id| node_knowledge(kg, id))
        .collect::<Result<_, _>>()?;
    let triples = sample_triples(kg, &nodes, n_triples, patient_seed(patient_id, seed))
        .into_iter()
        .map(|e| {
            Ok((
                kg.node(e.head)?.name.clone(),
                e.relation,
                kg.node(e.tail)?.name.clone(),
            ))
        })
        .collect::<Result<_, KgError>>()?;
    Ok(EnhancementBundle {
        patient_id: patient_id.to_string(),
        abnormal_features: ts_mentions
            .iter()
            .filter(|m| m.source == MentionSource::Timeseries)
            .cloned()
            .collect(),
        diseases: note_entities.to_vec(),
        knowledge_texts,
        triples,
        summary: None,
    })
}

#[derive(Debug, Clone)]
pub struct SummaryPrompt {
    pub template: PromptTemplate,
    pub knowledge_budget: usize,
}

impl Default for SummaryPrompt {
    fn default() -> Self {
        Self {
            template: PromptTemplate::new("summary", "v1", SUMMARY_V1),
            knowledge_budget: DEFAULT_KNOWLEDGE_BUDGET,
        }
    }
}

fn section<I: IntoIterator<Item = String>>(items: I) -> String {
    let lines: Vec<String> = items.into_iter().map(|s| format!("- {s}")).collect();
    if lines.is_empty() {
        NONE_SUMMARY.to_string()
    } else {
        lines.join("\n")
    }
}

/// Keeps whole items while they fit and cuts the first one that does not.
fn within_budget(texts: &[String], budget: usize) -> Vec<String> {
    let mut left = budget;
    let mut out = Vec::new();
    for t in texts {
        let n = t.chars().count();
        if n <= left {
            left -= n;
            out.push(t.clone());
        } else {
            if left > 0 {
                out.push(t.chars().take(left).collect());
            }
            break;
        }
    }
    out
}

impl SummaryPrompt {
    pub fn render(&self, bundle: &EnhancementBundle) -> Result<String, TemplateError> {
        let features = section(bundle.abnormal_features.iter().map(|m| m.surface.clone()));
        let diseases = section(bundle.diseases.iter().cloned());
        let knowledge = section(within_budget(
            &bundle.knowledge_texts,
            self.knowledge_budget,
        ));
        let triples = section(
            bundle
                .triples
                .iter()
                .map(|(h, r, t)| format!("{h} — {r} — {t}")),
        );
        self.template.render(&[
            ("abnormal_features", &features),
            ("diseases", &diseases),
            ("knowledge", &knowledge),
            ("triples", &triples),
        ])
    }
}

pub fn build_summary_prompt(
    bundle: &EnhancementBundle,
    prompt: &SummaryPrompt,
) -> Result<String, TemplateError> {
    prompt.render(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substitution {
    ContentRisk,
    EmptyReply,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryOutcome {
    pub text: String,
    pub substitution: Option<Substitution>,
}

pub fn generate_summary(
    bundle: &EnhancementBundle,
    gateway: &Gateway,
    profile: &str,
    prompt: &SummaryPrompt,
) -> Result<SummaryOutcome, SummarizeError> {
    let rendered = prompt.render(bundle)?;
    let fallback = |substitution| {
        tracing::warn!(patient = %bundle.patient_id, ?substitution, "summary replaced with None");
        Ok(SummaryOutcome {
            text: NONE_SUMMARY.to_string(),
            substitution: Some(substitution),
        })
    };
    match gateway.complete(profile, &rendered) {
        Ok(r) if r.text.trim().is_empty() => fallback(Substitution::EmptyReply),
        Ok(r) => Ok(SummaryOutcome {
            text: r.text,
            substitution: None,
        }),
        Err(e) if e.is_content_risk() => fallback(Substitution::ContentRisk),
        Err(source) => Err(SummarizeError::Gateway {
            patient_id: bundle.patient_id.clone(),
            source,
        }),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub total: usize,
    pub generated: usize,
    /// Summaries replaced with "None" because the model refused.
    pub content_risk_substitutions: usize,
    pub empty_reply_substitutions: usize,
    pub substituted_ids: Vec<String>,
    /// Patients whose generation failed with a transport error (keep-going mode).
    pub failed_ids: Vec<String>,
}

/// Generates summaries in parallel, filling `bundle.summary`. Without
/// `keep_going` the first transport error aborts the run.
pub fn summarize_all(
    bundles: &mut [EnhancementBundle],
    gateway: &Gateway,
    profile: &str,
    prompt: &SummaryPrompt,
    keep_going: bool,
) -> Result<RunSummary, SummarizeError> {
    let outcomes: Vec<Result<SummaryOutcome, SummarizeError>> = bundles
        .par_iter()
        .map(|b| generate_summary(b, gateway, profile, prompt))
        .collect();
    let mut run = RunSummary {
        total: bundles.len(),
        ..RunSummary::default()
    };
    let mut first_err = None;
    for (b, outcome) in bundles.iter_mut().zip(outcomes) {
        match outcome {
            Ok(o) => {
                match o.substitution {
                    Some(Substitution::ContentRisk) => run.content_risk_substitutions += 1,
                    Some(Substitution::EmptyReply) => run.empty_reply_substitutions += 1,
                    None => run.generated += 1,
                }
                if o.substitution.is_some() {
                    run.substituted_ids.push(b.patient_id.clone());
                }
                b.summary = Some(o.text);
            }
            Err(e) => {
                tracing::error!(patient = %b.patient_id, error = %e, "summary generation failed");
                run.failed_ids.push(b.patient_id.clone());
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) if !keep_going => Err(e),
        _ => Ok(run),
    }
}

/// Looks up bundles by patient id.
pub fn index_bundles(bundles: &[EnhancementBundle]) -> HashMap<&str, &EnhancementBundle> {
    bundles.iter().map(|b| (b.patient_id.as_str(), b)).collect()
}
