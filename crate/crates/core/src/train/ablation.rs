use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bootstrap::EvalReport;
use super::data::{stratified_subsample, Dataset};
use super::trainer::TrainingConfig;
use super::{fit_and_evaluate, TrainError, Variant};
use crate::fusion::{FusionKind, Modalities};

pub const SPARSITY_FRACTIONS: [f64; 5] = [0.01, 0.2, 0.4, 0.6, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Modality,
    InternalFusion,
    Sparsity,
    Sensitivity,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Modality => "modality",
            Suite::InternalFusion => "internal_fusion",
            Suite::Sparsity => "sparsity",
            Suite::Sensitivity => "sensitivity",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    /// Accepts `internal_fusion` and `internal-fusion`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "modality" => Ok(Suite::Modality),
            "internal_fusion" => Ok(Suite::InternalFusion),
            "sparsity" => Ok(Suite::Sparsity),
            "sensitivity" => Ok(Suite::Sensitivity),
            other => Err(format!("unknown ablation suite {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub suite: String,
    pub cell: String,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// One cell of a suite: a label, the variant, the training config and an
/// optional training-set fraction.
struct Cell {
    label: String,
    variant: Variant,
    cfg: TrainingConfig,
    fraction: Option<f64>,
}

fn cells(suite: Suite, cfg: &TrainingConfig) -> Vec<Cell> {
    // suites fix (lr, d) per cell rather than searching
    let base = TrainingConfig {
        grid_search: false,
        ..cfg.clone()
    };
    let plain = |label: String, variant: Variant, cfg: TrainingConfig| Cell {
        label,
        variant,
        cfg,
        fraction: None,
    };
    match suite {
        Suite::Modality => [
            Modalities::TS_ONLY,
            Modalities::NOTE_ONLY,
            Modalities::RAG_ONLY,
            Modalities::TS_NOTE,
            Modalities::TS_RAG,
            Modalities::NOTE_RAG,
            Modalities::ALL,
        ]
        .into_iter()
        .map(|m| {
            let v = Variant {
                modalities: m,
                fusion: FusionKind::Cross,
            };
            plain(m.label(), v, base.clone())
        })
        .collect(),
        Suite::InternalFusion => [
            ("ours", FusionKind::Cross),
            ("ts_query_only", FusionKind::TsQueryOnly),
            ("text_query_only", FusionKind::TextQueryOnly),
            ("self_attention", FusionKind::SelfAttention),
            ("concat", FusionKind::Concat),
        ]
        .into_iter()
        .map(|(name, fusion)| {
            let v = Variant {
                modalities: Modalities::ALL,
                fusion,
            };
            plain(name.to_string(), v, base.clone())
        })
        .collect(),
        Suite::Sparsity => SPARSITY_FRACTIONS
            .into_iter()
            .map(|f| Cell {
                label: format!("{}%", (f * 100.0).round()),
                variant: Variant::default(),
                cfg: base.clone(),
                fraction: Some(f),
            })
            .collect(),
        Suite::Sensitivity => {
            let ds = cfg.hidden_grid.iter().map(|&d| {
                let c = TrainingConfig {
                    hidden_dim: d,
                    ..base.clone()
                };
                plain(format!("d={d}"), Variant::default(), c)
            });
            let lrs = cfg.lr_grid.iter().map(|&lr| {
                let c = TrainingConfig {
                    learning_rate: lr,
                    ..base.clone()
                };
                plain(format!("lr={lr}"), Variant::default(), c)
            });
            ds.chain(lrs).collect()
        }
    }
}

fn run_cell(
    data: &Dataset,
    cell: &Cell,
    n_bootstrap: usize,
    eval_seed: u64,
) -> Result<EvalReport, TrainError> {
    let result = match cell.fraction {
        Some(f) => {
            let sub = Dataset {
                train: stratified_subsample(&data.train, f, cell.cfg.seed),
                ..data.clone()
            };
            fit_and_evaluate(&sub, &cell.cfg, cell.variant, n_bootstrap, eval_seed)?
        }
        None => fit_and_evaluate(data, &cell.cfg, cell.variant, n_bootstrap, eval_seed)?,
    };
    Ok(result.bootstrap.report)
}

/// Runs every cell of `suite` in parallel. Failed cells keep their row with
/// the error message instead of a report.
pub fn run_ablation(
    suite: Suite,
    data: &Dataset,
    cfg: &TrainingConfig,
    n_bootstrap: usize,
    eval_seed: u64,
) -> Result<Vec<AblationRow>, TrainError> {
    cfg.validate()?;
    let cells = cells(suite, cfg);
    Ok(cells
        .par_iter()
        .map(|c| {
            let r = run_cell(data, c, n_bootstrap, eval_seed);
            if let Err(e) = &r {
                tracing::warn!(suite = suite.name(), cell = %c.label, error = %e, "ablation cell failed");
            }
            AblationRow {
                suite: suite.name().to_string(),
                cell: c.label.clone(),
                error: r.as_ref().err().map(|e| e.to_string()),
                report: r.ok(),
            }
        })
        .collect())
}

/// Writes the table with one row per cell; failed cells get empty metric
/// fields and an `error` column.
pub fn write_ablation_csv<W: Write>(mut w: W, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "suite,cell,auroc_mean,auroc_std,auprc_mean,auprc_std,minpse_mean,minpse_std,error"
    )?;
    for r in rows {
        let metrics = match &r.report {
            Some(e) => format!(
                "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                e.auroc.mean,
                e.auroc.std,
                e.auprc.mean,
                e.auprc.std,
                e.min_p_se.mean,
                e.min_p_se.std
            ),
            None => ",,,,,".to_string(),
        };
        let err = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        let err = if err.contains(',') {
            format!("\"{err}\"")
        } else {
            err
        };
        writeln!(w, "{},{},{},{}", r.suite, r.cell, metrics, err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_have_expected_cells() {
        let cfg = TrainingConfig::default();
        assert_eq!(cells(Suite::Modality, &cfg).len(), 7);
        assert_eq!(cells(Suite::InternalFusion, &cfg).len(), 5);
        assert_eq!(cells(Suite::Sparsity, &cfg).len(), 5);
        assert_eq!(cells(Suite::Sensitivity, &cfg).len(), 7);
        let labels: Vec<String> = cells(Suite::Modality, &cfg)
            .into_iter()
            .map(|c| c.label)
            .collect();
        assert!(labels.contains(&"TS+Note+RAG".to_string()));
        assert_eq!(
            "internal_fusion".parse::<Suite>().unwrap(),
            Suite::InternalFusion
        );
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn suite_names_parse() {
        assert_eq!(
            "internal-fusion".parse::<Suite>(),
            Ok(Suite::InternalFusion)
        );
        assert_eq!(
            Suite::InternalFusion.name().parse::<Suite>(),
            Ok(Suite::InternalFusion)
        );
        assert!("fusion".parse::<Suite>().is_err());
    }

    #[test]
    fn csv_marks_failures() {
        let rows = vec![AblationRow {
            suite: "modality".into(),
            cell: "TS".into(),
            report: None,
            error: Some("bad, worse".into()),
        }];
        let mut out = Vec::new();
        write_ablation_csv(&mut out, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "modality,TS,,,,,,,\"bad, worse\""
        );
    }
}
