use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::auprc;
use super::optim::AdamW;
use super::TrainError;
use crate::fusion::{gradients, predict, Batch, FusionError, FusionParams, Mode, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub lr_grid: Vec<f64>,
    pub hidden_grid: Vec<usize>,
    /// Search the grid instead of using `learning_rate` and `hidden_dim`.
    pub grid_search: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-3,
            hidden_dim: 64,
            max_epochs: 100,
            patience: 10,
            dropout_rate: 0.25,
            weight_decay: 1e-2,
            seed: 0,
            lr_grid: vec![0.01, 0.001, 0.0001],
            hidden_grid: vec![32, 64, 128, 256],
            grid_search: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 || self.hidden_dim == 0 || self.max_epochs == 0 {
            return bad("batch_size, hidden_dim and max_epochs must be positive");
        }
        if self.patience >= self.max_epochs {
            return bad("patience must be smaller than max_epochs");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite())
            || !(self.weight_decay >= 0.0)
        {
            return bad("learning_rate and weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.lr_grid.is_empty() || self.hidden_grid.is_empty() {
            return bad("grids must be non-empty");
        }
        if self.lr_grid.iter().any(|l| !(*l > 0.0)) || self.hidden_grid.contains(&0) {
            return bad("grid values must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auprc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: FusionParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub stopped_epoch: usize,
}

fn diverged(epoch: usize, e: FusionError) -> TrainError {
    match e {
        FusionError::NonFinite(what) => TrainError::Diverged {
            epoch,
            detail: what,
        },
        other => TrainError::Fusion(other),
    }
}

/// Seed for the dropout masks of one batch.
fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((epoch as u64) << 32) ^ batch as u64
}

/// Mini-batch AdamW with early stopping on the score returned by
/// `evaluate(params, epoch)` after every epoch. Stops once `patience`
/// epochs pass without a strict improvement and returns the best epoch's
/// parameters.
pub fn train_with(
    init: FusionParams,
    train: &[Sample],
    cfg: &TrainingConfig,
    mut evaluate: impl FnMut(&FusionParams, usize) -> Result<f64, TrainError>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let mut params = init;
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay, &params.tensors);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, FusionParams)> = None;
    let mut stopped = cfg.max_epochs;

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = Batch::new(&refs)?;
            let mode = Mode::Train {
                seed: batch_seed(cfg.seed, epoch, b),
            };
            let g = gradients(&params, &batch, mode).map_err(|e| diverged(epoch, e))?;
            loss_sum += g.loss * refs.len() as f64;
            opt.step(&mut params.tensors, &g.tensors);
            for (layer, m) in &g.moments {
                params.update_running(*layer, &m.mean, &m.var, m.n);
            }
        }
        if params
            .tensors
            .iter()
            .flat_map(|t| t.iter())
            .any(|v| !v.is_finite())
        {
            return Err(TrainError::Diverged {
                epoch,
                detail: "parameters".into(),
            });
        }
        let train_loss = loss_sum / train.len() as f64;
        let score = evaluate(&params, epoch)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_auprc: score,
        });
        tracing::debug!(epoch, train_loss, val_auprc = score, "epoch finished");
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((epoch, score, params.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if epoch - best_epoch >= cfg.patience {
            stopped = epoch;
            break;
        }
    }
    let (best_epoch, best_score, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
        best_score,
        stopped_epoch: stopped,
    })
}

/// Trains with early stopping on validation AUPRC (eval-mode forward).
pub fn train(
    init: FusionParams,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainingConfig,
) -> Result<TrainOutcome, TrainError> {
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let labels: Vec<u8> = val.iter().map(|s| s.label as u8).collect();
    train_with(init, train, cfg, |p, epoch| {
        let scores = predict(p, val, cfg.batch_size).map_err(|e| diverged(epoch, e))?;
        auprc(&scores, &labels).map_err(|source| TrainError::Metric {
            split: "validation",
            source,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionConfig;
    use ndarray::{Array1, Array2};
    use rand::Rng;

    fn samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = f64::from(u8::from(rng.gen_bool(0.4)));
                let t = rng.gen_range(2..6);
                Sample {
                    id: format!("s{i}"),
                    ts: Array2::from_shape_fn((t, 3), |_| rng.gen_range(-1.0..1.0) + label),
                    note: Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0)),
                    rag: Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0)),
                    label,
                }
            })
            .collect()
    }

    fn small_cfg() -> TrainingConfig {
        TrainingConfig {
            batch_size: 16,
            max_epochs: 30,
            patience: 10,
            ..Default::default()
        }
    }

    fn init() -> FusionParams {
        FusionParams::init(FusionConfig::new(3, 8, 4), 1).unwrap()
    }

    #[test]
    fn early_stop_returns_peak_epoch_params() {
        let data = samples(40, 1);
        let curve = [
            0.2, 0.4, 0.9, 0.8, 0.7, 0.6, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5,
        ];
        let mut snapshot = None;
        let out = train_with(init(), &data, &small_cfg(), |p, epoch| {
            if epoch == 3 {
                snapshot = Some(p.clone());
            }
            Ok(curve[epoch - 1])
        })
        .unwrap();
        assert_eq!(out.stopped_epoch, 13);
        assert_eq!(out.best_epoch, 3);
        assert_eq!(out.history.len(), 13);
        assert_eq!(out.params, snapshot.unwrap());
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let data = samples(20, 2);
        let out = train_with(init(), &data, &small_cfg(), |_, _| Ok(0.5)).unwrap();
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.stopped_epoch, 11);
    }

    #[test]
    fn zero_lr_leaves_weights_unchanged() {
        let data = samples(30, 3);
        let cfg = TrainingConfig {
            learning_rate: 0.0,
            weight_decay: 0.0,
            max_epochs: 4,
            patience: 3,
            ..small_cfg()
        };
        let start = init();
        let out = train_with(start.clone(), &data, &cfg, |_, e| Ok(e as f64)).unwrap();
        assert_eq!(out.params.tensors, start.tensors);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let (tr, va) = (samples(60, 4), samples(20, 5));
        let a = train(init(), &tr, &va, &small_cfg()).unwrap();
        let b = train(init(), &tr, &va, &small_cfg()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        for h in &a.history {
            assert!((0.0..=1.0).contains(&h.val_auprc), "{h:?}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = TrainingConfig {
            patience: 100,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        let bad = TrainingConfig {
            lr_grid: vec![],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainingConfig::default().validate().is_ok());
    }

    #[test]
    fn divergence_reports_epoch() {
        let data = samples(20, 6);
        let cfg = TrainingConfig {
            learning_rate: 1e300,
            ..small_cfg()
        };
        match train_with(init(), &data, &cfg, |_, _| Ok(0.5)) {
            Err(TrainError::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn single_class_validation_names_split() {
        let tr = samples(20, 7);
        let mut va = samples(10, 8);
        va.iter_mut().for_each(|s| s.label = 0.0);
        match train(init(), &tr, &va, &small_cfg()) {
            Err(TrainError::Metric { split, .. }) => assert_eq!(split, "validation"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
