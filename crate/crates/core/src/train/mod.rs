//! Training loop, grid search, evaluation metrics, bootstrap reporting and
//! the ablation harnesses.

pub mod ablation;
pub mod bootstrap;
pub mod data;
pub mod grid;
pub mod metrics;
pub mod optim;
pub mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ablation::{run_ablation, write_ablation_csv, AblationRow, Suite};
pub use bootstrap::{
    bootstrap_eval, replay, BootstrapRun, EvalReport, MetricSummary, DEFAULT_BOOTSTRAP,
};
pub use data::{build_dataset, stratified_subsample, Dataset, TextInputs};
pub use grid::{grid_search, GridCell, GridOutcome};
pub use metrics::{all_metrics, auprc, auroc, min_p_se, MetricError, Metrics};
pub use optim::AdamW;
pub use trainer::{train, train_with, EpochRecord, TrainOutcome, TrainingConfig};

use crate::fusion::{predict, FusionConfig, FusionError, FusionKind, FusionParams, Modalities};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("training diverged at epoch {epoch}: non-finite {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("metric undefined on the {split} split: {source}")]
    Metric {
        split: &'static str,
        #[source]
        source: MetricError,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("every grid cell failed: {0:?}")]
    AllCellsFailed(Vec<String>),
}

/// Which inputs the model sees and how they interact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub modalities: Modalities,
    pub fusion: FusionKind,
}

impl Default for Variant {
    fn default() -> Self {
        Self {
            modalities: Modalities::ALL,
            fusion: FusionKind::Cross,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub training: TrainOutcome,
    pub test_scores: Vec<f64>,
    pub bootstrap: BootstrapRun,
    pub lr: f64,
    pub d: usize,
}

pub fn model_config(
    data: &Dataset,
    cfg: &TrainingConfig,
    variant: Variant,
    d: usize,
) -> FusionConfig {
    FusionConfig {
        dropout: cfg.dropout_rate,
        modalities: variant.modalities,
        fusion: variant.fusion,
        ..FusionConfig::new(data.n_features, d, data.d_text)
    }
}

/// Trains one model at `(lr, d)` with early stopping on validation AUPRC.
pub fn fit(
    data: &Dataset,
    cfg: &TrainingConfig,
    variant: Variant,
    lr: f64,
    d: usize,
) -> Result<TrainOutcome, TrainError> {
    let cfg = TrainingConfig {
        learning_rate: lr,
        hidden_dim: d,
        ..cfg.clone()
    };
    cfg.validate()?;
    let init = FusionParams::init(model_config(data, &cfg, variant, d), cfg.seed)?;
    train(init, &data.train, &data.val, &cfg)
}

/// Scores the test split with the trained parameters and bootstraps the
/// metrics.
pub fn evaluate(
    data: &Dataset,
    params: &FusionParams,
    batch_size: usize,
    n_bootstrap: usize,
    seed: u64,
) -> Result<(Vec<f64>, BootstrapRun), TrainError> {
    let scores = predict(params, &data.test, batch_size)?;
    let labels: Vec<u8> = data.test.iter().map(|s| s.label as u8).collect();
    let run = bootstrap_eval(&scores, &labels, n_bootstrap, seed).map_err(|source| {
        TrainError::Metric {
            split: "test",
            source,
        }
    })?;
    Ok((scores, run))
}

/// Fits at the configured `(lr, d)`, or at the grid's best cell when
/// `cfg.grid_search` is set, then evaluates on the test split.
pub fn fit_and_evaluate(
    data: &Dataset,
    cfg: &TrainingConfig,
    variant: Variant,
    n_bootstrap: usize,
    eval_seed: u64,
) -> Result<RunResult, TrainError> {
    let (training, lr, d) = if cfg.grid_search {
        let g = grid_search(&cfg.lr_grid, &cfg.hidden_grid, |c| {
            let out = fit(data, cfg, variant, c.lr, c.d)?;
            Ok((out.best_score, out))
        })?;
        (g.best_value, g.best.lr, g.best.d)
    } else {
        (
            fit(data, cfg, variant, cfg.learning_rate, cfg.hidden_dim)?,
            cfg.learning_rate,
            cfg.hidden_dim,
        )
    };
    let (test_scores, mut bootstrap) = evaluate(
        data,
        &training.params,
        cfg.batch_size,
        n_bootstrap,
        eval_seed,
    )?;
    bootstrap.report.config = serde_json::json!({
        "training": cfg,
        "selected": { "learning_rate": lr, "hidden_dim": d },
        "variant": { "modalities": variant.modalities.label(), "fusion": variant.fusion },
        "best_epoch": training.best_epoch,
        "stopped_epoch": training.stopped_epoch,
    });
    Ok(RunResult {
        training,
        test_scores,
        bootstrap,
        lr,
        d,
    })
}
