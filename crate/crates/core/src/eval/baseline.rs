use std::collections::{BTreeMap, HashMap};

use log::warn;
use rand::Rng;

use super::{ForecastRecord, SOURCE_BASELINE};
use crate::error::{Error, Result};
use crate::forecast::N_CLASSES;
use crate::labeler::{EscalationState, LabelMap};
use crate::month::Month;
use crate::rng::{derive_seed, rng_from};

pub const DEFAULT_WINDOW: usize = 12;

/// Bootstrap of the `window` states ending at `horizon - step - 1`: each
/// resample draws `window` states with replacement and contributes its class
/// fractions; the forecast is their mean.
pub fn conflictology(
    history: &BTreeMap<Month, EscalationState>,
    step: usize,
    horizon: Month,
    window: usize,
    n_boot: usize,
    seed: u64,
) -> Result<[f64; N_CLASSES]> {
    if window == 0 || n_boot == 0 {
        return Err(Error::invalid("window and n_boot must be positive"));
    }
    let end = horizon.offset(-(step as i32) - 1);
    let start = end.offset(1 - window as i32);
    let states: Vec<EscalationState> = history.range(start..=end).map(|(_, s)| *s).collect();
    if states.is_empty() {
        return Err(Error::invalid(format!("no history in {start}..={end}")));
    }
    if states.len() < window {
        log::debug!("baseline window {start}..={end} has only {} months", states.len());
    }
    let mut rng = rng_from(seed);
    let mut counts = [0u64; N_CLASSES];
    for _ in 0..n_boot {
        for _ in 0..window {
            counts[states[rng.random_range(0..states.len())].index()] += 1;
        }
    }
    let total = (n_boot * window) as f64;
    Ok(counts.map(|c| c as f64 / total))
}

pub fn history_by_dyad(labels: &LabelMap) -> BTreeMap<String, BTreeMap<Month, EscalationState>> {
    let mut out: BTreeMap<String, BTreeMap<Month, EscalationState>> = BTreeMap::new();
    for ((d, m), s) in labels {
        out.entry(d.clone()).or_default().insert(*m, *s);
    }
    out
}

/// Baseline forecasts aligned one-to-one with `records`.
pub fn baseline_records(
    records: &[ForecastRecord],
    history: &LabelMap,
    window: usize,
    n_boot: usize,
    seed: u64,
) -> Result<Vec<ForecastRecord>> {
    let by_dyad = history_by_dyad(history);
    let empty = BTreeMap::new();
    let mut cache: HashMap<(String, Month, usize), [f64; N_CLASSES]> = HashMap::new();
    let mut short = 0usize;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let key = r.key();
        let p = match cache.get(&key) {
            Some(p) => *p,
            None => {
                let h = by_dyad.get(&r.dyad_id).unwrap_or(&empty);
                let end = r.month.offset(-(r.step as i32) - 1);
                if h.range(end.offset(1 - window as i32)..=end).count() < window {
                    short += 1;
                }
                let s = derive_seed(seed, &format!("{}|{}|{}", r.dyad_id, r.month, r.step));
                let p = conflictology(h, r.step, r.month, window, n_boot, s)
                    .map_err(|e| Error::invalid(format!("baseline for {} {}: {e}", r.dyad_id, r.month)))?;
                cache.insert(key, p);
                p
            }
        };
        out.push(ForecastRecord {
            probabilities: p,
            source: SOURCE_BASELINE.to_string(),
            ..r.clone()
        });
    }
    if short > 0 {
        warn!("{short} baseline forecasts used fewer than {window} months of history");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use EscalationState::*;

    fn hist(states: &[EscalationState], end: Month) -> BTreeMap<Month, EscalationState> {
        let start = end.offset(1 - states.len() as i32);
        states.iter().enumerate().map(|(i, s)| (start.offset(i as i32), *s)).collect()
    }

    #[test]
    fn degenerate_window() {
        let h: Month = "2022-03".parse().unwrap();
        let p = conflictology(&hist(&[Escalation; 12], h.offset(-1)), 0, h, 12, 50, 1).unwrap();
        assert_eq!(p, [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn window_shifts_with_step() {
        let h: Month = "2022-03".parse().unwrap();
        let end: Month = "2021-11".parse().unwrap();
        let mut history = hist(&[Plateau; 12], end);
        history.insert(end.offset(1), Escalation);
        let p = conflictology(&history, 3, h, 12, 20, 3).unwrap();
        assert_eq!(p, [0.0, 0.0, 1.0, 0.0]);
        assert!(conflictology(&BTreeMap::new(), 3, h, 12, 20, 3).is_err());
    }
}
