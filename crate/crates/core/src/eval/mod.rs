//! Evaluation: conflictology baseline, micro-averaged metrics, bootstrap
//! intervals and report files.

mod baseline;
mod metrics;
mod report;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::N_CLASSES;
use crate::labeler::EscalationState;
use crate::month::Month;

pub use baseline::{baseline_records, conflictology, history_by_dyad, DEFAULT_WINDOW};
pub use metrics::{
    accuracy, ap_ovr_micro, argmax, auroc, auroc_ovr_micro, average_precision, bootstrap_ci, confusion,
    micro_metrics, per_class_binary_report, ClassReport, Confusion, Interval, Metric, MicroMetrics,
};
pub use report::{emit_report, Combination, MetricRow, ReportConfig};

pub const SOURCE_MODEL: &str = "model";
pub const SOURCE_BASELINE: &str = "baseline";
/// Suffix for the variant averaged over digests of the same dyad-month.
pub const DMMEAN_SUFFIX: &str = "_dmmean";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub dyad_id: String,
    /// Month whose state is forecast.
    pub month: Month,
    pub step: usize,
    pub probabilities: [f64; N_CLASSES],
    pub actual: EscalationState,
    pub source: String,
}

impl ForecastRecord {
    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.probabilities.iter().sum();
        if (s - 1.0).abs() > 1e-6 || self.probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(format!(
                "{} {}: probabilities {:?} are not a distribution",
                self.dyad_id, self.month, self.probabilities
            )));
        }
        Ok(())
    }

    pub fn key(&self) -> (String, Month, usize) {
        (self.dyad_id.clone(), self.month, self.step)
    }
}

/// Averages probabilities over records sharing (dyad, month, step). Output
/// is sorted by that key.
pub fn dyad_month_mean(records: &[ForecastRecord]) -> Vec<ForecastRecord> {
    let mut groups: BTreeMap<(String, Month, usize), (Vec<[f64; N_CLASSES]>, EscalationState, String)> =
        BTreeMap::new();
    for r in records {
        groups
            .entry(r.key())
            .or_insert_with(|| (Vec::new(), r.actual, r.source.clone()))
            .0
            .push(r.probabilities);
    }
    groups
        .into_iter()
        .map(|((dyad_id, month, step), (ps, actual, source))| {
            let mut mean = [0.0; N_CLASSES];
            for p in &ps {
                for c in 0..N_CLASSES {
                    mean[c] += p[c] / ps.len() as f64;
                }
            }
            ForecastRecord {
                dyad_id,
                month,
                step,
                probabilities: mean,
                actual,
                source: format!("{source}{DMMEAN_SUFFIX}"),
            }
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ForecastRow {
    dyad_id: String,
    month: Month,
    p_peace: f64,
    p_escalation: f64,
    p_plateau: f64,
    p_deescalation: f64,
    actual_state: u8,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_forecasts_csv(path: &Path, records: &[ForecastRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in records {
        let [p0, p1, p2, p3] = r.probabilities;
        w.serialize(ForecastRow {
            dyad_id: r.dyad_id.clone(),
            month: r.month,
            p_peace: p0,
            p_escalation: p1,
            p_plateau: p2,
            p_deescalation: p3,
            actual_state: r.actual.code(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_forecasts_csv(path: &Path, step: usize, source: &str) -> Result<Vec<ForecastRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<ForecastRow>() {
        let row = row?;
        let r = ForecastRecord {
            dyad_id: row.dyad_id,
            month: row.month,
            step,
            probabilities: [row.p_peace, row.p_escalation, row.p_plateau, row.p_deescalation],
            actual: EscalationState::from_code(row.actual_state)?,
            source: source.to_string(),
        };
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}
