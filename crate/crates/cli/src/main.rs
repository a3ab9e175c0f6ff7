use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ehr_rag::ehr::Task;
use ehr_rag::train::Suite;
use ehr_rag_cli::{Overrides, Pipeline, PipelineConfig, PipelineError, RunOptions};

#[derive(Parser)]
#[command(
    name = "ehr-rag",
    version,
    about = "Knowledge-enhanced multimodal EHR prediction pipeline"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// z-score threshold for abnormal lab findings.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Cosine similarity threshold for graph matching.
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    task: Option<Task>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Recompute outputs that already exist.
    #[arg(long, global = true)]
    force: bool,
    /// Log and skip failing patients instead of aborting.
    #[arg(long, global = true)]
    keep_going: bool,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort and knowledge graph.
    Synth,
    /// Validate the patient file and fix the train/val/test split.
    Ingest,
    /// Extract lab and note entities.
    Extract,
    /// Match entities to knowledge-graph nodes.
    Match,
    /// Generate knowledge summaries.
    Summarize,
    /// Train the fusion model.
    Train,
    /// Bootstrap test metrics for the trained model.
    Evaluate,
    /// Run an ablation suite: modality, internal-fusion, sparsity or sensitivity.
    Ablate { suite: Suite },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let c = cli.common;
    let mut cfg = match &c.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        epsilon: c.epsilon,
        eta: c.eta,
        task: c.task,
        seed: c.seed,
        cache_dir: c.cache_dir,
        output_dir: c.output_dir,
    });
    if c.jobs == 0 {
        return Err(PipelineError::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(c.jobs)
        .build_global()
        .map_err(|e| PipelineError::Runtime(e.to_string()))?;
    let pipeline = Pipeline::new(
        cfg,
        RunOptions {
            jobs: c.jobs,
            force: c.force,
            keep_going: c.keep_going,
        },
    )?;
    match cli.command {
        Command::Synth => drop(pipeline.synth()?),
        Command::Ingest => drop(pipeline.ingest()?),
        Command::Extract => drop(pipeline.extract()?),
        Command::Match => drop(pipeline.match_entities()?),
        Command::Summarize => drop(pipeline.summarize()?),
        Command::Train => drop(pipeline.train()?),
        Command::Evaluate => {
            let r = pipeline.evaluate()?;
            println!(
                "{}",
                serde_json::to_string_pretty(&r)
                    .map_err(|e| PipelineError::Runtime(e.to_string()))?
            );
        }
        Command::Ablate { suite } => drop(pipeline.ablate(suite)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(error = %e, "pipeline failed");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
