//! Pipeline configuration: TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use ehr_rag::ehr::{SplitRatios, SyntheticConfig, Task};
use ehr_rag::gateway::doubles::{HashEmbedder, LexiconChat};
use ehr_rag::gateway::{
    ChatProfile, DiskCache, EmbedProfile, Gateway, HttpChatBackend, HttpEmbedBackend, RetryPolicy,
};
use ehr_rag::kg::{KnowledgeGraph, DEFAULT_TRIPLES};
use ehr_rag::note_entities::DEFAULT_MAX_ROUNDS;
use ehr_rag::train::{TrainingConfig, DEFAULT_BOOTSTRAP};
use ehr_rag::ts_entities::DEFAULT_EPSILON;

use crate::PipelineError;

pub const DEFAULT_ETA: f64 = 0.6;

/// Profile names the stages look up.
pub const EXTRACTOR: &str = "extractor";
pub const SUMMARIZER: &str = "summarizer";
pub const ENTITY_ENCODER: &str = "entity_encoder";
pub const TEXT_ENCODER: &str = "text_encoder";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub patients: Option<PathBuf>,
    pub kg_nodes: Option<PathBuf>,
    pub kg_edges: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub epsilon: f64,
    pub eta: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            eta: DEFAULT_ETA,
        }
    }
}

/// One named model endpoint. Mock kinds run locally and deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    HttpChat {
        model: String,
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        temperature: f64,
        #[serde(default = "default_max_tokens")]
        max_tokens: u32,
    },
    HttpEmbed {
        model: String,
        dim: usize,
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    /// Lexicon-driven stand-in whose vocabulary is the knowledge graph's
    /// node names. Prompts containing any `refuse_containing` string are
    /// refused as risky content.
    MockChat {
        #[serde(default)]
        refuse_containing: Vec<String>,
    },
    HashEmbed {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_timeout() -> u64 {
    60
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_profiles() -> BTreeMap<String, ProfileConfig> {
    let chat = ProfileConfig::MockChat {
        refuse_containing: Vec::new(),
    };
    BTreeMap::from([
        (EXTRACTOR.to_string(), chat.clone()),
        (SUMMARIZER.to_string(), chat),
        (
            ENTITY_ENCODER.to_string(),
            ProfileConfig::HashEmbed { dim: 256, seed: 0 },
        ),
        (
            TEXT_ENCODER.to_string(),
            ProfileConfig::HashEmbed { dim: 64, seed: 1 },
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: Task,
    pub seed: u64,
    pub n_bootstrap: usize,
    pub n_triples: usize,
    pub max_rounds: usize,
    pub split: [f64; 3],
    pub paths: PathsConfig,
    pub thresholds: Thresholds,
    pub gateway: BTreeMap<String, ProfileConfig>,
    pub training: TrainingConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            task: Task::Mortality,
            seed: 0,
            n_bootstrap: DEFAULT_BOOTSTRAP,
            n_triples: DEFAULT_TRIPLES,
            max_rounds: DEFAULT_MAX_ROUNDS,
            split: [0.7, 0.1, 0.2],
            paths: PathsConfig::default(),
            thresholds: Thresholds::default(),
            gateway: default_profiles(),
            training: TrainingConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub task: Option<Task>,
    pub seed: Option<u64>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    /// Reads a TOML file; relative paths inside it resolve against the
    /// file's directory. Profiles absent from the file keep their defaults.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.patients,
            &mut cfg.paths.kg_nodes,
            &mut cfg.paths.kg_edges,
            &mut cfg.paths.cache_dir,
            &mut cfg.paths.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        for (name, p) in default_profiles() {
            cfg.gateway.entry(name).or_insert(p);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.epsilon {
            self.thresholds.epsilon = v;
        }
        if let Some(v) = o.eta {
            self.thresholds.eta = v;
        }
        if let Some(v) = o.task {
            self.task = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
            self.training.seed = v;
        }
        if let Some(v) = &o.cache_dir {
            self.paths.cache_dir = Some(v.clone());
        }
        if let Some(v) = &o.output_dir {
            self.paths.output_dir = Some(v.clone());
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.thresholds.epsilon > 0.0) {
            return bad(format!(
                "epsilon must be positive, got {}",
                self.thresholds.epsilon
            ));
        }
        if !(self.thresholds.eta > 0.0 && self.thresholds.eta < 1.0) {
            return bad(format!(
                "eta must lie in (0, 1), got {}",
                self.thresholds.eta
            ));
        }
        if self.n_bootstrap == 0 || self.max_rounds == 0 {
            return bad("n_bootstrap and max_rounds must be positive".into());
        }
        self.split_ratios()?;
        self.training
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.synthetic
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn split_ratios(&self) -> Result<SplitRatios, PipelineError> {
        let [train, val, test] = self.split;
        if [train, val, test].iter().any(|r| !(*r > 0.0)) || (train + val + test - 1.0).abs() > 1e-9
        {
            return Err(PipelineError::Config(format!(
                "split {:?} must be positive and sum to 1",
                self.split
            )));
        }
        Ok(SplitRatios { train, val, test })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.output_dir().join(file)
    }

    pub fn patients_path(&self) -> PathBuf {
        self.paths
            .patients
            .clone()
            .unwrap_or_else(|| self.out("patients.jsonl"))
    }

    pub fn kg_paths(&self) -> (PathBuf, PathBuf) {
        (
            self.paths
                .kg_nodes
                .clone()
                .unwrap_or_else(|| self.out("kg_nodes.jsonl")),
            self.paths
                .kg_edges
                .clone()
                .unwrap_or_else(|| self.out("kg_edges.jsonl")),
        )
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.paths
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.out("cache"))
    }

    /// Builds the gateway with every configured profile. Mock chat profiles
    /// take their vocabulary from `kg`.
    pub fn gateway(
        &self,
        kg: Option<&KnowledgeGraph>,
        jobs: usize,
    ) -> Result<Gateway, PipelineError> {
        let lexicon: Vec<String> = kg
            .map(|k| k.nodes().iter().map(|n| n.name.clone()).collect())
            .unwrap_or_default();
        let mut b = Gateway::builder()
            .cache(DiskCache::new(self.cache_dir()))
            .retry(RetryPolicy::default())
            .max_in_flight(jobs.max(1));
        for (name, p) in &self.gateway {
            let err = |e: ehr_rag::gateway::BackendError| {
                PipelineError::Config(format!("gateway profile {name}: {e}"))
            };
            b = match p {
                ProfileConfig::HttpChat {
                    model,
                    endpoint,
                    timeout_secs,
                    temperature,
                    max_tokens,
                } => {
                    let backend = HttpChatBackend::new(
                        endpoint.clone(),
                        model.clone(),
                        Duration::from_secs(*timeout_secs),
                    )
                    .map_err(err)?;
                    let mut prof = ChatProfile::new(Arc::new(backend));
                    prof.temperature = *temperature;
                    prof.max_tokens = *max_tokens;
                    b.chat_profile(name.clone(), prof)
                }
                ProfileConfig::HttpEmbed {
                    model,
                    dim,
                    endpoint,
                    timeout_secs,
                } => {
                    let backend = HttpEmbedBackend::new(
                        endpoint.clone(),
                        model.clone(),
                        *dim,
                        Duration::from_secs(*timeout_secs),
                    )
                    .map_err(err)?;
                    b.embed_profile(name.clone(), EmbedProfile::new(Arc::new(backend)))
                }
                ProfileConfig::MockChat { refuse_containing } => {
                    let mut chat = LexiconChat::new(&lexicon);
                    chat.refuse_containing = refuse_containing.clone();
                    b.chat_backend(name.clone(), Arc::new(chat))
                }
                ProfileConfig::HashEmbed { dim, seed } => {
                    b.embed_backend(name.clone(), Arc::new(HashEmbedder::with_seed(*dim, *seed)))
                }
            };
        }
        Ok(b.build())
    }
}
