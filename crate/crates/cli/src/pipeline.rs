//! The pipeline stages. Every stage reads and writes files under the
//! output directory so any stage can be rerun on its own.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ehr_rag::ehr::{
    generate_synthetic_cohort, load_patients, split_cohort, write_patients, CohortSplit,
    LoadOptions, PatientRecord,
};
use ehr_rag::fusion::FusionParams;
use ehr_rag::gateway::Gateway;
use ehr_rag::kg::{
    build_index, load_kg, match_entity, KnowledgeGraph, MatchResult, NodeEmbeddingIndex,
};
use ehr_rag::note_entities::NoteEntityExtractor;
use ehr_rag::summarizer::{
    assemble_bundle, summarize_all, EnhancementBundle, RunSummary, SummaryPrompt, NONE_SUMMARY,
};
use ehr_rag::train::{
    self, build_dataset, run_ablation, write_ablation_csv, AblationRow, Dataset, EpochRecord,
    EvalReport, Metrics, Suite, TextInputs, Variant,
};
use ehr_rag::ts_entities::{
    compute_feature_stats, extract_ts_entities, EntityMention, StatsModel, StatsSource,
};

use crate::config::{PipelineConfig, ENTITY_ENCODER, EXTRACTOR, SUMMARIZER, TEXT_ENCODER};
use crate::PipelineError;

pub const COHORT: &str = "cohort.jsonl";
pub const SPLIT: &str = "split.json";
pub const ENTITIES_TS: &str = "entities_ts.jsonl";
pub const ENTITIES_NOTE: &str = "entities_note.jsonl";
pub const KG_INDEX: &str = "kg_index.bin";
pub const MATCHES: &str = "matches.jsonl";
pub const BUNDLES: &str = "bundles.jsonl";
pub const SUMMARY_RUN: &str = "summarize_run.json";
pub const MODEL: &str = "model.json";
pub const REPORT: &str = "report.json";
pub const RESAMPLES: &str = "bootstrap_resamples.json";
pub const ABLATION: &str = "ablation_table.csv";

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub jobs: usize,
    pub force: bool,
    pub keep_going: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            force: false,
            keep_going: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsEntitiesLine {
    pub patient_id: String,
    pub mentions: Vec<EntityMention>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteEntitiesLine {
    pub patient_id: String,
    pub entities: Vec<String>,
    pub rounds: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchesLine {
    pub patient_id: String,
    pub matches: Vec<MatchResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub task: String,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub params: FusionParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResamplesFile {
    pub seed: u64,
    pub patient_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub resamples: Vec<Vec<usize>>,
    pub per_resample: Vec<Metrics>,
}

/// Counters a stage reports back, mostly for logs and tests.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageStats {
    pub processed: usize,
    pub skipped: usize,
    pub failed: Vec<String>,
    pub backend_calls: u64,
    pub cache_hits: u64,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(|e| {
        PipelineError::Config(format!(
            "cannot open {}: {e} (run the earlier stage first)",
            path.display()
        ))
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| {
                PipelineError::Data(format!("{} line {}: {e}", path.display(), i + 1))
            })?,
        );
    }
    Ok(out)
}

/// Writes through a temporary file so readers never see a partial file.
fn write_atomic(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> Result<(), PipelineError> {
    write_atomic(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, &item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        PipelineError::Config(format!(
            "cannot open {}: {e} (run the earlier stage first)",
            path.display()
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn finished(stage: &str, start: Instant, stats: &StageStats) {
    tracing::info!(
        stage,
        duration_ms = start.elapsed().as_millis() as u64,
        processed = stats.processed,
        skipped = stats.skipped,
        failed = stats.failed.len(),
        backend_calls = stats.backend_calls,
        cache_hits = stats.cache_hits,
        "stage finished"
    );
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub opts: RunOptions,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, opts: RunOptions) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self { cfg, opts })
    }

    fn kg(&self) -> Result<KnowledgeGraph, PipelineError> {
        let (nodes, edges) = self.cfg.kg_paths();
        Ok(load_kg(&nodes, &edges)?)
    }

    /// The gateway for a stage, with mock vocabularies taken from the graph.
    pub fn gateway(&self, kg: Option<&KnowledgeGraph>) -> Result<Gateway, PipelineError> {
        self.cfg.gateway(kg, self.opts.jobs)
    }

    pub fn cohort(&self) -> Result<Vec<PatientRecord>, PipelineError> {
        Ok(
            load_patients(&self.cfg.out(COHORT), &LoadOptions::default())
                .map_err(|e| PipelineError::Config(format!("{e} (run `ingest` first)")))?
                .records,
        )
    }

    pub fn split(&self, cohort: &[PatientRecord]) -> Result<CohortSplit, PipelineError> {
        let file: SplitFile = read_json(&self.cfg.out(SPLIT))?;
        let by_id: HashMap<&str, &PatientRecord> =
            cohort.iter().map(|p| (p.id.as_str(), p)).collect();
        let pick = |ids: &[String]| -> Result<Vec<PatientRecord>, PipelineError> {
            ids.iter()
                .map(|id| {
                    by_id.get(id.as_str()).map(|p| (*p).clone()).ok_or_else(|| {
                        PipelineError::Data(format!("split names unknown patient {id}"))
                    })
                })
                .collect()
        };
        Ok(CohortSplit {
            train: pick(&file.train)?,
            val: pick(&file.val)?,
            test: pick(&file.test)?,
            seed: file.seed,
        })
    }

    /// Writes a synthetic cohort and knowledge graph to the configured
    /// patient and graph paths.
    pub fn synth(&self) -> Result<StageStats, PipelineError> {
        let start = Instant::now();
        let (records, kg) =
            generate_synthetic_cohort(&self.cfg.synthetic, self.cfg.synthetic.seed)?;
        let patients = self.cfg.patients_path();
        write_atomic(&patients, |w| write_patients(w, &records))?;
        let (nodes, edges) = self.cfg.kg_paths();
        for p in [&nodes, &edges] {
            if let Some(d) = p.parent() {
                std::fs::create_dir_all(d)?;
            }
        }
        kg.write(&nodes, &edges)?;
        let stats = StageStats {
            processed: records.len(),
            ..Default::default()
        };
        finished("synth", start, &stats);
        Ok(stats)
    }

    /// Validates and normalizes the patient file, then fixes the split.
    pub fn ingest(&self) -> Result<StageStats, PipelineError> {
        let start = Instant::now();
        let loaded = load_patients(&self.cfg.patients_path(), &LoadOptions::default())?;
        let mut records = loaded.records;
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let split = split_cohort(&records, self.cfg.split_ratios()?, self.cfg.seed)?;
        write_atomic(&self.cfg.out(COHORT), |w| write_patients(w, &records))?;
        write_json(
            &self.cfg.out(SPLIT),
            &SplitFile {
                seed: split.seed,
                train: CohortSplit::ids(&split.train),
                val: CohortSplit::ids(&split.val),
                test: CohortSplit::ids(&split.test),
            },
        )?;
        let stats = StageStats {
            processed: records.len(),
            skipped: loaded.warnings.len(),
            ..Default::default()
        };
        finished("ingest", start, &stats);
        Ok(stats)
    }

    /// Abnormal lab findings and note entities for every patient. Patients
    /// already present in both outputs are skipped unless `force` is set.
    pub fn extract(&self) -> Result<StageStats, PipelineError> {
        let start = Instant::now();
        let cohort = self.cohort()?;
        let split = self.split(&cohort)?;
        let kg = self.kg()?;
        let gw = self.gateway(Some(&kg))?;
        if !gw.has_chat_profile(EXTRACTOR) {
            return Err(PipelineError::Config(format!(
                "gateway profile {EXTRACTOR:?} is not configured"
            )));
        }
        let stats_model = compute_feature_stats(&split.train, StatsSource::Population)
            .map_err(|e| PipelineError::Data(e.to_string()))?;
        let StatsModel::Population(stats) = stats_model else {
            unreachable!("population statistics requested")
        };

        let (ts_path, note_path) = (self.cfg.out(ENTITIES_TS), self.cfg.out(ENTITIES_NOTE));
        let load_existing = |p: &Path| p.exists() && !self.opts.force;
        let mut ts_lines: BTreeMap<String, TsEntitiesLine> = if load_existing(&ts_path) {
            read_jsonl::<TsEntitiesLine>(&ts_path)?
                .into_iter()
                .map(|l| (l.patient_id.clone(), l))
                .collect()
        } else {
            BTreeMap::new()
        };
        let mut note_lines: BTreeMap<String, NoteEntitiesLine> = if load_existing(&note_path) {
            read_jsonl::<NoteEntitiesLine>(&note_path)?
                .into_iter()
                .map(|l| (l.patient_id.clone(), l))
                .collect()
        } else {
            BTreeMap::new()
        };
        let todo: Vec<&PatientRecord> = cohort
            .iter()
            .filter(|p| !(ts_lines.contains_key(&p.id) && note_lines.contains_key(&p.id)))
            .collect();
        let extractor = NoteEntityExtractor::new(&gw, EXTRACTOR);
        let epsilon = self.cfg.thresholds.epsilon;
        let max_rounds = self.cfg.max_rounds;
        let results: Vec<(String, Result<(TsEntitiesLine, NoteEntitiesLine), PipelineError>)> = todo
            .par_iter()
            .map(|p| {
                let t0 = Instant::now();
                let r = (|| {
                    let mentions = extract_ts_entities(&p.ts, &stats, epsilon).map_err(|e| PipelineError::Data(e.to_string()))?;
                    let (entities, trace) = extractor.extract(&p.note, max_rounds)?;
                    Ok((
                        TsEntitiesLine {
                            patient_id: p.id.clone(),
                            mentions,
                        },
                        NoteEntitiesLine {
                            patient_id: p.id.clone(),
                            entities: entities.into_iter().collect(),
                            rounds: trace.total_rounds,
                            converged: trace.converged,
                        },
                    ))
                })();
                tracing::debug!(stage = "extract", patient_id = %p.id, duration_ms = t0.elapsed().as_millis() as u64, ok = r.is_ok());
                (p.id.clone(), r)
            })
            .collect();

        let mut stats_out = StageStats {
            skipped: cohort.len() - todo.len(),
            ..Default::default()
        };
        for (id, r) in results {
            match r {
                Ok((t, n)) => {
                    ts_lines.insert(id.clone(), t);
                    note_lines.insert(id, n);
                    stats_out.processed += 1;
                }
                Err(e) if self.opts.keep_going => {
                    tracing::error!(stage = "extract", patient_id = %id, error = %e, "patient skipped");
                    stats_out.failed.push(id);
                }
                Err(e) => return Err(e),
            }
        }
        write_jsonl(&ts_path, ts_lines.values())?;
        write_jsonl(&note_path, note_lines.values())?;
        stats_out.backend_calls = gw.backend_calls();
        stats_out.cache_hits = gw.cache_hits();
        finished("extract", start, &stats_out);
        Ok(stats_out)
    }

    fn index(
        &self,
        kg: &KnowledgeGraph,
        gw: &Gateway,
    ) -> Result<NodeEmbeddingIndex, PipelineError> {
        let path = self.cfg.out(KG_INDEX);
        let has_encoder = gw.has_embed_profile(ENTITY_ENCODER);
        if path.exists() && !self.opts.force {
            let index = NodeEmbeddingIndex::load(&path)?;
            if has_encoder && gw.embed_dim(ENTITY_ENCODER)? != index.dim() {
                return Err(PipelineError::Config(format!(
                    "{} has dimension {} but profile {ENTITY_ENCODER:?} embeds to {}",
                    path.display(),
                    index.dim(),
                    gw.embed_dim(ENTITY_ENCODER)?
                )));
            }
            return Ok(index);
        }
        if !has_encoder {
            return Err(PipelineError::Config(format!(
                "no node index at {} and no {ENTITY_ENCODER:?} profile to build one",
                path.display()
            )));
        }
        let index = build_index(kg, &gw.embedder(ENTITY_ENCODER))?;
        index.save(&path)?;
        Ok(index)
    }

    /// Links every extracted entity to knowledge-graph nodes.
    pub fn match_entities(&self) -> Result<StageStats, PipelineError> {
        let start = Instant::now();
        let kg = self.kg()?;
        let gw = self.gateway(Some(&kg))?;
        let index = self.index(&kg, &gw)?;
        if !gw.has_embed_profile(ENTITY_ENCODER) {
            return Err(PipelineError::Config(format!(
                "profile {ENTITY_ENCODER:?} is needed to embed entities"
            )));
        }
        let ts: Vec<TsEntitiesLine> = read_jsonl(&self.cfg.out(ENTITIES_TS))?;
        let notes: HashMap<String, NoteEntitiesLine> =
            read_jsonl::<NoteEntitiesLine>(&self.cfg.out(ENTITIES_NOTE))?
                .into_iter()
                .map(|l| (l.patient_id.clone(), l))
                .collect();
        let embedder = gw.embedder(ENTITY_ENCODER);
        let eta = self.cfg.thresholds.eta;
        let lines: Vec<Result<MatchesLine, PipelineError>> = ts
            .par_iter()
            .map(|t| {
                let t0 = Instant::now();
                let note = notes.get(&t.patient_id).map(|n| n.entities.as_slice()).unwrap_or_default();
                let mentions = t.mentions.iter().cloned().chain(note.iter().map(EntityMention::note));
                let matches = mentions.map(|m| match_entity(&m, &index, &embedder, eta)).collect::<Result<Vec<_>, _>>()?;
                tracing::debug!(stage = "match", patient_id = %t.patient_id, duration_ms = t0.elapsed().as_millis() as u64);
                Ok(MatchesLine {
                    patient_id: t.patient_id.clone(),
                    matches,
                })
            })
            .collect();
        let lines = lines.into_iter().collect::<Result<Vec<_>, _>>()?;
        write_jsonl(&self.cfg.out(MATCHES), &lines)?;
        let stats = StageStats {
            processed: lines.len(),
            backend_calls: gw.backend_calls(),
            cache_hits: gw.cache_hits(),
            ..Default::default()
        };
        finished("match", start, &stats);
        Ok(stats)
    }

    /// Assembles each patient's bundle and generates its summary.
    pub fn summarize(&self) -> Result<RunSummary, PipelineError> {
        let start = Instant::now();
        let kg = self.kg()?;
        let gw = self.gateway(Some(&kg))?;
        if !gw.has_chat_profile(SUMMARIZER) {
            return Err(PipelineError::Config(format!(
                "gateway profile {SUMMARIZER:?} is not configured"
            )));
        }
        let ts: HashMap<String, TsEntitiesLine> =
            read_jsonl::<TsEntitiesLine>(&self.cfg.out(ENTITIES_TS))?
                .into_iter()
                .map(|l| (l.patient_id.clone(), l))
                .collect();
        let notes: HashMap<String, NoteEntitiesLine> =
            read_jsonl::<NoteEntitiesLine>(&self.cfg.out(ENTITIES_NOTE))?
                .into_iter()
                .map(|l| (l.patient_id.clone(), l))
                .collect();
        let matches: Vec<MatchesLine> = read_jsonl(&self.cfg.out(MATCHES))?;
        let mut bundles = matches
            .iter()
            .map(|m| {
                let mentions = ts
                    .get(&m.patient_id)
                    .map(|t| t.mentions.as_slice())
                    .unwrap_or_default();
                let diseases = notes
                    .get(&m.patient_id)
                    .map(|n| n.entities.as_slice())
                    .unwrap_or_default();
                assemble_bundle(
                    &m.patient_id,
                    mentions,
                    diseases,
                    &m.matches,
                    &kg,
                    self.cfg.n_triples,
                    self.cfg.seed,
                )
            })
            .collect::<Result<Vec<EnhancementBundle>, _>>()?;
        let run = summarize_all(
            &mut bundles,
            &gw,
            SUMMARIZER,
            &SummaryPrompt::default(),
            self.opts.keep_going,
        )?;
        write_jsonl(&self.cfg.out(BUNDLES), &bundles)?;
        write_json(&self.cfg.out(SUMMARY_RUN), &run)?;
        let stats = StageStats {
            processed: run.total,
            failed: run.failed_ids.clone(),
            backend_calls: gw.backend_calls(),
            cache_hits: gw.cache_hits(),
            ..Default::default()
        };
        tracing::info!(
            stage = "summarize",
            content_risk_substitutions = run.content_risk_substitutions,
            empty_reply_substitutions = run.empty_reply_substitutions,
            "summary substitutions"
        );
        finished("summarize", start, &stats);
        Ok(run)
    }

    /// Embeds notes and summaries and builds the standardized splits.
    pub fn dataset(&self) -> Result<Dataset, PipelineError> {
        let cohort = self.cohort()?;
        let split = self.split(&cohort)?;
        let gw = self.gateway(None)?;
        if !gw.has_embed_profile(TEXT_ENCODER) {
            return Err(PipelineError::Config(format!(
                "gateway profile {TEXT_ENCODER:?} is not configured"
            )));
        }
        let bundles: HashMap<String, EnhancementBundle> =
            read_jsonl::<EnhancementBundle>(&self.cfg.out(BUNDLES))?
                .into_iter()
                .map(|b| (b.patient_id.clone(), b))
                .collect();
        let text: Vec<Result<(String, TextInputs), PipelineError>> = cohort
            .par_iter()
            .map(|p| {
                let note = if p.note.is_empty() { NONE_SUMMARY } else { p.note.text.as_str() };
                let summary = match bundles.get(&p.id).and_then(|b| b.summary.as_deref()) {
                    Some(s) => s,
                    None => {
                        tracing::warn!(stage = "train", patient_id = %p.id, "no summary; using None");
                        NONE_SUMMARY
                    }
                };
                Ok((
                    p.id.clone(),
                    TextInputs {
                        note: gw.embed(TEXT_ENCODER, note)?,
                        rag: gw.embed(TEXT_ENCODER, summary)?,
                    },
                ))
            })
            .collect();
        let text = text.into_iter().collect::<Result<HashMap<_, _>, _>>()?;
        Ok(build_dataset(&split, self.cfg.task, &text)?)
    }

    /// Fits the model (grid search when configured) and writes `model.json`.
    pub fn train(&self) -> Result<ModelFile, PipelineError> {
        let start = Instant::now();
        let data = self.dataset()?;
        let cfg = &self.cfg.training;
        let variant = Variant::default();
        let (outcome, lr, d) = if cfg.grid_search {
            let g = train::grid_search(&cfg.lr_grid, &cfg.hidden_grid, |c| {
                let out = train::fit(&data, cfg, variant, c.lr, c.d)?;
                Ok((out.best_score, out))
            })?;
            for (c, r) in &g.cells {
                tracing::info!(stage = "train", lr = c.lr, d = c.d, result = ?r, "grid cell");
            }
            (g.best_value, g.best.lr, g.best.d)
        } else {
            (
                train::fit(&data, cfg, variant, cfg.learning_rate, cfg.hidden_dim)?,
                cfg.learning_rate,
                cfg.hidden_dim,
            )
        };
        let model = ModelFile {
            task: self.cfg.task.to_string(),
            learning_rate: lr,
            hidden_dim: d,
            best_epoch: outcome.best_epoch,
            stopped_epoch: outcome.stopped_epoch,
            history: outcome.history,
            params: outcome.params,
        };
        write_json(&self.cfg.out(MODEL), &model)?;
        tracing::info!(
            stage = "train",
            duration_ms = start.elapsed().as_millis() as u64,
            lr,
            d,
            best_epoch = model.best_epoch,
            "stage finished"
        );
        Ok(model)
    }

    /// Bootstraps test metrics for the trained model into `report.json`.
    pub fn evaluate(&self) -> Result<EvalReport, PipelineError> {
        let start = Instant::now();
        let model: ModelFile = read_json(&self.cfg.out(MODEL))?;
        if model.task != self.cfg.task.to_string() {
            return Err(PipelineError::Config(format!(
                "model was trained for {} but the task is {}",
                model.task, self.cfg.task
            )));
        }
        let data = self.dataset()?;
        let (scores, run) = train::evaluate(
            &data,
            &model.params,
            self.cfg.training.batch_size,
            self.cfg.n_bootstrap,
            self.cfg.seed,
        )?;
        let mut report = run.report;
        report.config = serde_json::json!({
            "task": self.cfg.task,
            "seed": self.cfg.seed,
            "training_seed": self.cfg.training.seed,
            "epsilon": self.cfg.thresholds.epsilon,
            "eta": self.cfg.thresholds.eta,
            "learning_rate": model.learning_rate,
            "hidden_dim": model.hidden_dim,
            "best_epoch": model.best_epoch,
            "training": self.cfg.training,
        });
        write_json(&self.cfg.out(REPORT), &report)?;
        write_json(
            &self.cfg.out(RESAMPLES),
            &ResamplesFile {
                seed: self.cfg.seed,
                patient_ids: data.test.iter().map(|s| s.id.clone()).collect(),
                labels: data.test.iter().map(|s| s.label as u8).collect(),
                scores,
                resamples: run.resamples,
                per_resample: run.per_resample,
            },
        )?;
        tracing::info!(
            stage = "evaluate",
            duration_ms = start.elapsed().as_millis() as u64,
            auroc = report.auroc.mean,
            auprc = report.auprc.mean,
            "stage finished"
        );
        Ok(report)
    }

    /// Runs one ablation suite into `ablation_table.csv`.
    pub fn ablate(&self, suite: Suite) -> Result<Vec<AblationRow>, PipelineError> {
        let start = Instant::now();
        let data = self.dataset()?;
        let rows = run_ablation(
            suite,
            &data,
            &self.cfg.training,
            self.cfg.n_bootstrap,
            self.cfg.seed,
        )?;
        write_atomic(&self.cfg.out(ABLATION), |w| write_ablation_csv(w, &rows))?;
        tracing::info!(
            stage = "ablate",
            suite = suite.name(),
            duration_ms = start.elapsed().as_millis() as u64,
            failed = rows.iter().filter(|r| r.error.is_some()).count(),
            "stage finished"
        );
        Ok(rows)
    }
}
