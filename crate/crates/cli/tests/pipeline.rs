//! Stage-level behaviour of the pipeline and the binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use ehr_rag::note_entities::ExtractionPrompt;
use ehr_rag::summarizer::{build_summary_prompt, EnhancementBundle, SummaryPrompt, NONE_SUMMARY};
use ehr_rag_cli::config::ProfileConfig;
use ehr_rag_cli::pipeline::{BUNDLES, ENTITIES_NOTE, MATCHES, REPORT};
use ehr_rag_cli::{Pipeline, PipelineConfig, PipelineError, RunOptions};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// The twelve-patient fixture cohort and graph, writing into `dir`.
fn fixture_config(dir: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.paths.patients = Some(fixture("mini_patients.jsonl"));
    c.paths.kg_nodes = Some(fixture("mini_kg_nodes.jsonl"));
    c.paths.kg_edges = Some(fixture("mini_kg_edges.jsonl"));
    c.paths.output_dir = Some(dir.join("out"));
    c.paths.cache_dir = Some(dir.join("cache"));
    c.split = [0.5, 0.25, 0.25];
    c
}

fn run(cfg: PipelineConfig, opts: RunOptions) -> Pipeline {
    Pipeline::new(cfg, opts).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ehr-rag"))
}

#[test]
fn golden_matches() {
    let dir = tempfile::tempdir().unwrap();
    let p = run(fixture_config(dir.path()), RunOptions::default());
    p.ingest().unwrap();
    p.extract().unwrap();
    p.match_entities().unwrap();
    let actual = std::fs::read_to_string(p.cfg.out(MATCHES)).unwrap();
    let golden = fixture("mini_matches.golden.jsonl");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &actual).unwrap();
    }
    assert_eq!(actual, std::fs::read_to_string(golden).unwrap());
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let read = |jobs: usize| {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .unwrap();
        pool.install(|| {
            let p = run(
                fixture_config(dir.path()),
                RunOptions {
                    jobs,
                    ..RunOptions::default()
                },
            );
            p.ingest().unwrap();
            p.extract().unwrap();
            p.match_entities().unwrap();
            p.summarize().unwrap();
        });
        ["entities_ts.jsonl", ENTITIES_NOTE, MATCHES, "bundles.jsonl"]
            .map(|f| std::fs::read(dir.path().join("out").join(f)).unwrap())
    };
    assert_eq!(read(1), read(4));
}

#[test]
fn extraction_resumes_from_existing_output() {
    let dir = tempfile::tempdir().unwrap();
    let p = run(fixture_config(dir.path()), RunOptions::default());
    p.ingest().unwrap();
    let first = p.extract().unwrap();
    assert_eq!((first.processed, first.skipped), (12, 0));
    let before = std::fs::read(p.cfg.out(ENTITIES_NOTE)).unwrap();
    let second = p.extract().unwrap();
    assert_eq!(
        (second.processed, second.skipped, second.backend_calls),
        (0, 12, 0)
    );
    assert_eq!(std::fs::read(p.cfg.out(ENTITIES_NOTE)).unwrap(), before);

    let forced = run(
        p.cfg.clone(),
        RunOptions {
            force: true,
            ..RunOptions::default()
        },
    )
    .extract()
    .unwrap();
    assert_eq!(forced.processed, 12);
    // every reply now comes from the cache
    assert_eq!(forced.backend_calls, 0);
    assert!(forced.cache_hits > 0);
}

fn refusing(dir: &Path, profile: &str, word: &str) -> PipelineConfig {
    let mut c = fixture_config(dir);
    c.gateway.insert(
        profile.into(),
        ProfileConfig::MockChat {
            refuse_containing: vec![word.into()],
        },
    );
    c
}

fn kg_names() -> Vec<String> {
    let kg = ehr_rag::kg::load_kg(
        &fixture("mini_kg_nodes.jsonl"),
        &fixture("mini_kg_edges.jsonl"),
    )
    .unwrap();
    kg.nodes().iter().map(|n| n.name.clone()).collect()
}

/// The graph name found in the most, but not all, of `prompts`, with its count.
fn partial_word(prompts: &[String]) -> (String, usize) {
    kg_names()
        .into_iter()
        .map(|n| {
            let k = prompts.iter().filter(|p| p.contains(n.as_str())).count();
            (n, k)
        })
        .filter(|(_, k)| *k > 0 && *k < prompts.len())
        .max_by_key(|(_, k)| *k)
        .expect("some name splits the fixture")
}

fn read_bundles(p: &Pipeline) -> Vec<EnhancementBundle> {
    std::fs::read_to_string(p.cfg.out(BUNDLES))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn keep_going_skips_failing_patients() {
    let dir = tempfile::tempdir().unwrap();
    let base = run(fixture_config(dir.path()), RunOptions::default());
    base.ingest().unwrap();
    let prompts: Vec<String> = base
        .cohort()
        .unwrap()
        .iter()
        .map(|r| ExtractionPrompt::default().render(&r.note).unwrap())
        .collect();
    let (word, hits) = partial_word(&prompts);

    let strict = run(
        refusing(dir.path(), "extractor", &word),
        RunOptions::default(),
    );
    let err = strict.extract().unwrap_err();
    assert!(matches!(err, PipelineError::Runtime(_)), "{err}");
    assert_eq!(err.exit_code(), 2);

    let lenient = run(
        refusing(dir.path(), "extractor", &word),
        RunOptions {
            keep_going: true,
            ..RunOptions::default()
        },
    );
    let stats = lenient.extract().unwrap();
    assert_eq!(stats.failed.len(), hits);
    assert_eq!(stats.processed, 12 - hits);
}

#[test]
fn refused_summaries_become_none() {
    let dir = tempfile::tempdir().unwrap();
    let base = run(fixture_config(dir.path()), RunOptions::default());
    base.ingest().unwrap();
    base.extract().unwrap();
    base.match_entities().unwrap();
    base.summarize().unwrap();
    let prompts: Vec<String> = read_bundles(&base)
        .iter()
        .map(|b| build_summary_prompt(b, &SummaryPrompt::default()).unwrap())
        .collect();
    let (word, hits) = partial_word(&prompts);
    // cached replies would bypass the refusing model
    let mut cfg = refusing(dir.path(), "summarizer", &word);
    cfg.paths.cache_dir = Some(dir.path().join("cold-cache"));
    let p = run(cfg, RunOptions::default());
    let summary = p.summarize().unwrap();
    assert_eq!(summary.content_risk_substitutions, hits);
    assert_eq!(summary.substituted_ids.len(), hits);
    let bundles = read_bundles(&p);
    assert_eq!(bundles.len(), 12);
    assert_eq!(
        bundles
            .iter()
            .filter(|b| b.summary.as_deref() == Some(NONE_SUMMARY))
            .count(),
        hits
    );
}

#[test]
fn stages_report_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = run(fixture_config(dir.path()), RunOptions::default());
    for err in [
        p.extract().unwrap_err(),
        p.match_entities().unwrap_err(),
        p.train().map(|_| ()).unwrap_err(),
    ] {
        assert!(matches!(err, PipelineError::Config(_)), "{err}");
    }
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = |args: &[&str]| {
        bin()
            .args(args)
            .arg("--output-dir")
            .arg(&out)
            .output()
            .unwrap()
            .status
            .code()
    };

    assert_eq!(
        status(&[
            "ingest",
            "--config",
            dir.path().join("missing.toml").to_str().unwrap()
        ]),
        Some(1)
    );
    assert_eq!(status(&["extract"]), Some(1));
    assert_eq!(status(&["ingest", "--eta", "1.5"]), Some(1));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[thresholds]\nbogus = 1\n").unwrap();
    assert_eq!(
        status(&["synth", "--config", cfg.to_str().unwrap()]),
        Some(1)
    );

    // an unreachable chat endpoint is a runtime failure
    let cfg = dir.path().join("http.toml");
    std::fs::write(
        &cfg,
        "[synthetic]\nn_patients = 20\n[gateway.extractor]\nkind = \"http_chat\"\nmodel = \"m\"\nendpoint = \"http://127.0.0.1:9/v1\"\ntimeout_secs = 2\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(status(&["synth", "--config", c]), Some(0));
    assert_eq!(status(&["ingest", "--config", c]), Some(0));
    assert_eq!(status(&["extract", "--config", c]), Some(2));
}

#[test]
fn binary_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pipeline.toml");
    std::fs::write(
        &cfg,
        "[paths]\noutput_dir = \"run\"\n[training]\nmax_epochs = 6\npatience = 3\nhidden_dim = 16\n",
    )
    .unwrap();
    for stage in [
        "synth",
        "ingest",
        "extract",
        "match",
        "summarize",
        "train",
        "evaluate",
    ] {
        let out = bin()
            .args([stage, "--config", cfg.to_str().unwrap(), "--jobs", "2"])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        // logs are JSON lines
        for line in String::from_utf8_lossy(&out.stderr).lines() {
            let v: serde_json::Value =
                serde_json::from_str(line).unwrap_or_else(|e| panic!("{stage}: {e}: {line}"));
            assert!(v.get("level").is_some());
        }
    }
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("run").join(REPORT)).unwrap(),
    )
    .unwrap();
    let auroc = report["auroc"]["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auroc), "{auroc}");
    assert_eq!(report["n_bootstrap"], 10);
}
