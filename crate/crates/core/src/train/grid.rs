use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub d: usize,
}

#[derive(Debug)]
pub struct GridOutcome<T> {
    pub best: GridCell,
    pub best_score: f64,
    pub best_value: T,
    /// Every cell with its validation score or failure message.
    pub cells: Vec<(GridCell, Result<f64, String>)>,
}

/// Runs `run` on every `(lr, d)` cell in parallel and keeps the highest
/// score. Ties go to the smaller `d`, then the smaller `lr`. Failed cells
/// are logged and skipped; the search fails only when every cell fails.
pub fn grid_search<T, F>(lrs: &[f64], ds: &[usize], run: F) -> Result<GridOutcome<T>, TrainError>
where
    T: Send,
    F: Fn(GridCell) -> Result<(f64, T), TrainError> + Sync,
{
    if lrs.is_empty() || ds.is_empty() {
        return Err(TrainError::Config("grids must be non-empty".into()));
    }
    let mut cells: Vec<GridCell> = ds
        .iter()
        .flat_map(|&d| lrs.iter().map(move |&lr| GridCell { lr, d }))
        .collect();
    cells.sort_by(|a, b| a.d.cmp(&b.d).then(a.lr.total_cmp(&b.lr)));
    let results: Vec<(GridCell, Result<(f64, T), TrainError>)> =
        cells.par_iter().map(|&c| (c, run(c))).collect();

    let mut summary = Vec::with_capacity(results.len());
    let mut best: Option<(GridCell, f64, T)> = None;
    for (cell, r) in results {
        match r {
            Ok((score, value)) => {
                summary.push((cell, Ok(score)));
                if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
                    best = Some((cell, score, value));
                }
            }
            Err(e) => {
                tracing::warn!(lr = cell.lr, d = cell.d, error = %e, "grid cell failed");
                summary.push((cell, Err(e.to_string())));
            }
        }
    }
    match best {
        Some((best, best_score, best_value)) => Ok(GridOutcome {
            best,
            best_score,
            best_value,
            cells: summary,
        }),
        None => Err(TrainError::AllCellsFailed(
            summary
                .into_iter()
                .filter_map(|(c, r)| r.err().map(|e| format!("lr={} d={}: {e}", c.lr, c.d)))
                .collect(),
        )),
    }
}
