use super::{EhrError, FeatureSpec, TimeSeriesMatrix};

/// One charted measurement, `hour` counted from admission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub hour: f64,
    pub feature: usize,
    pub value: f64,
}

/// Folds per-event rows into fixed windows (e.g. 12 hours), averaging the
/// values of each feature inside a window. Windows without a measurement for
/// a feature stay missing. Keeps at most `max_visits` windows.
pub fn consolidate(
    events: &[Event],
    features: Vec<FeatureSpec>,
    window_hours: f64,
    max_visits: usize,
) -> Result<TimeSeriesMatrix, EhrError> {
    if !(window_hours > 0.0) {
        return Err(EhrError::Validation(format!(
            "window_hours must be positive, got {window_hours}"
        )));
    }
    if events.is_empty() {
        return Err(EhrError::Validation("no events to consolidate".into()));
    }
    let f = features.len();
    let start = events.iter().map(|e| e.hour).fold(f64::INFINITY, f64::min);
    let mut windows: Vec<Vec<(f64, usize)>> = Vec::new();
    for e in events {
        if e.feature >= f {
            return Err(EhrError::Validation(format!(
                "event references unknown feature {}",
                e.feature
            )));
        }
        if !e.value.is_finite() || !e.hour.is_finite() {
            return Err(EhrError::Validation("non-finite event".into()));
        }
        let w = ((e.hour - start) / window_hours).floor() as usize;
        if w >= max_visits {
            continue;
        }
        if windows.len() <= w {
            windows.resize(w + 1, vec![(0.0, 0); f]);
        }
        let cell = &mut windows[w][e.feature];
        cell.0 += e.value;
        cell.1 += 1;
    }
    let values = windows
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(sum, n)| (n > 0).then(|| sum / n as f64))
                .collect()
        })
        .collect();
    TimeSeriesMatrix::new(values, features)
}
