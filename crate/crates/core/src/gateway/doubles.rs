//! Offline backends: scripted replies, closures, a feature-hashing embedder
//! and a lexicon-driven stand-in for the extraction/summary LLM.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, ChatRequest, EmbedBackend};

/// Replays queued replies in order, then repeats `fallback` if set.
pub struct ScriptedChat {
    replies: Mutex<VecDeque<Result<String, BackendError>>>,
    fallback: Option<String>,
    calls: AtomicUsize,
}

impl ScriptedChat {
    pub fn new(replies: Vec<Result<String, BackendError>>) -> Self {
        Self {
            replies: Mutex::new(replies.into()),
            fallback: None,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn repeating(text: impl Into<String>) -> Self {
        Self {
            replies: Mutex::new(VecDeque::new()),
            fallback: Some(text.into()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, _req: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.replies.lock().unwrap().pop_front() {
            Some(r) => r,
            None => self
                .fallback
                .clone()
                .ok_or_else(|| BackendError::Fatal("script exhausted".into())),
        }
    }
}

type ChatFn = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

pub struct FnChat {
    f: Box<ChatFn>,
    calls: AtomicUsize,
}

impl FnChat {
    pub fn new(
        f: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for FnChat {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.f)(req)
    }
}

pub(crate) fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// Bag-of-words feature hashing: every token maps to a fixed pseudo-random
/// Gaussian direction and a text embeds to the mean of its token vectors.
/// Texts sharing words get positive cosine similarity; identical token
/// multisets embed identically.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim, seed: 0 }
    }

    pub fn with_seed(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn token_vector(&self, token: &str, out: &mut [f64]) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        for x in out.iter_mut() {
            let s: f64 = StandardNormal.sample(&mut rng);
            *x += s;
        }
    }
}

impl EmbedBackend for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let mut v = vec![0.0; self.dim];
        let mut n = 0usize;
        for tok in tokens(text) {
            self.token_vector(&tok, &mut v);
            n += 1;
        }
        if n > 0 {
            v.iter_mut().for_each(|x| *x /= n as f64);
        }
        Ok(v)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Looks texts up in a fixed table; unknown texts fail.
#[derive(Debug, Clone, Default)]
pub struct FixtureEmbedder {
    pub dim: usize,
    pub table: HashMap<String, Vec<f64>>,
}

impl FixtureEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            table: HashMap::new(),
        }
    }

    pub fn with(mut self, text: impl Into<String>, v: Vec<f64>) -> Self {
        self.table.insert(text.into(), v);
        self
    }
}

impl EmbedBackend for FixtureEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| BackendError::Fatal(format!("no fixture embedding for {text:?}")))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

const NOTE_MARKER: &str = "\nClinical note:\n";
const NOTE_END: &str = "\n\nDiseases:";
const CANDIDATES_MARKER: &str = "\nCandidates:\n";
const CANDIDATES_END: &str = "\n\nVerdicts:";
const FEATURES_MARKER: &str = "\nAbnormal time-series findings:\n";
const DISEASES_MARKER: &str = "\nDiseases mentioned in the clinical notes:\n";
const SECTION_END: &str = "\n\n";

fn section<'a>(prompt: &'a str, marker: &str, end: &str) -> Option<&'a str> {
    let start = prompt.rfind(marker)? + marker.len();
    let rest = &prompt[start..];
    Some(rest.find(end).map_or(rest, |e| &rest[..e]))
}

fn listed_items(block: &str) -> Vec<&str> {
    block
        .lines()
        .map(|l| l.trim().trim_start_matches("- ").trim())
        .filter(|l| !l.is_empty() && *l != "None")
        .collect()
}

/// Stand-in for the extraction and summary models, driven by the shipped
/// prompt templates. Extraction reports lexicon terms found in the note (plus
/// any configured fabrications); the type filter confirms lexicon terms only;
/// summaries restate the listed findings and diseases.
#[derive(Debug, Clone, Default)]
pub struct LexiconChat {
    lexicon: Vec<String>,
    pub fabricate: Vec<String>,
    pub refuse_containing: Vec<String>,
}

impl LexiconChat {
    pub fn new<S: AsRef<str>>(lexicon: &[S]) -> Self {
        Self {
            lexicon: lexicon.iter().map(|s| s.as_ref().to_lowercase()).collect(),
            fabricate: Vec::new(),
            refuse_containing: Vec::new(),
        }
    }

    fn extract(&self, note: &str) -> String {
        let padded = format!(" {note} ");
        let mut found: Vec<&str> = self
            .lexicon
            .iter()
            .filter(|t| padded.contains(&format!(" {t} ")))
            .map(String::as_str)
            .collect();
        found.extend(self.fabricate.iter().map(String::as_str));
        if found.is_empty() {
            "None".into()
        } else {
            found.join(", ")
        }
    }

    fn filter(&self, block: &str) -> String {
        listed_items(block)
            .into_iter()
            .map(|c| {
                let verdict = if self.lexicon.iter().any(|t| t == c) {
                    "yes"
                } else {
                    "no"
                };
                format!("{c}: {verdict}")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn summarize(&self, prompt: &str) -> String {
        let features = section(prompt, FEATURES_MARKER, SECTION_END)
            .map(listed_items)
            .unwrap_or_default();
        let diseases = section(prompt, DISEASES_MARKER, SECTION_END)
            .map(listed_items)
            .unwrap_or_default();
        let mut out = String::new();
        if features.is_empty() {
            out.push_str("No abnormal time-series findings were reported. ");
        } else {
            out.push_str(&format!("Abnormal findings: {}. ", features.join("; ")));
        }
        if diseases.is_empty() {
            out.push_str("No diseases are documented in the notes.");
        } else {
            out.push_str(&format!("Documented diseases: {}. ", diseases.join("; ")));
            out.push_str("These conditions raise the risk of in-hospital mortality and readmission and need close monitoring.");
        }
        out
    }
}

impl ChatBackend for LexiconChat {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let p = &req.prompt;
        if self
            .refuse_containing
            .iter()
            .any(|s| p.contains(s.as_str()))
        {
            return Err(BackendError::ContentRisk("Content Exists Risk".into()));
        }
        if let Some(note) = section(p, NOTE_MARKER, NOTE_END) {
            Ok(self.extract(note))
        } else if let Some(block) = section(p, CANDIDATES_MARKER, CANDIDATES_END) {
            Ok(self.filter(block))
        } else if p.contains(FEATURES_MARKER) {
            Ok(self.summarize(p))
        } else {
            Err(BackendError::Fatal("unrecognized prompt".into()))
        }
    }
}
