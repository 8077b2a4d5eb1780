//! Four-state escalation labels from a fitted trend derivative.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::TrendFit;
use crate::ingest::DyadMonthSeries;
use crate::month::Month;

pub const DEFAULT_TAU: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum EscalationState {
    Peace = 0,
    Escalation = 1,
    Plateau = 2,
    Deescalation = 3,
}

impl EscalationState {
    pub const ALL: [EscalationState; 4] = [
        EscalationState::Peace,
        EscalationState::Escalation,
        EscalationState::Plateau,
        EscalationState::Deescalation,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("state code {code} not in 0..=3")))
    }

    pub fn name(self) -> &'static str {
        match self {
            EscalationState::Peace => "peace",
            EscalationState::Escalation => "escalation",
            EscalationState::Plateau => "plateau",
            EscalationState::Deescalation => "de-escalation",
        }
    }
}

impl From<EscalationState> for u8 {
    fn from(s: EscalationState) -> u8 {
        s.code()
    }
}

impl TryFrom<u8> for EscalationState {
    type Error = Error;
    fn try_from(c: u8) -> Result<Self> {
        EscalationState::from_code(c)
    }
}

impl fmt::Display for EscalationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelerConfig {
    pub tau: f64,
    pub train_end: Month,
    pub val_end: Month,
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if self.val_end < self.train_end {
            return Err(Error::invalid(format!(
                "val_end {} precedes train_end {}",
                self.val_end, self.train_end
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitSource {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub dyad_id: String,
    pub months: Vec<Month>,
    pub states: Vec<EscalationState>,
    pub derivatives: Vec<f64>,
    pub source_fit: FitSource,
}

/// State of one month. A zero-fatality month is Peace whatever the slope;
/// the ±τ boundaries belong to Plateau.
pub fn classify(derivative: f64, raw_fatalities: u64, tau: f64) -> EscalationState {
    if raw_fatalities == 0 {
        EscalationState::Peace
    } else if derivative > tau {
        EscalationState::Escalation
    } else if derivative < -tau {
        EscalationState::Deescalation
    } else {
        EscalationState::Plateau
    }
}

pub fn discretize(derivative: &[f64], raw_fatalities: &[u64], tau: f64) -> Result<Vec<EscalationState>> {
    if derivative.len() != raw_fatalities.len() {
        return Err(Error::Length(format!(
            "derivative has {} months, fatalities {}",
            derivative.len(),
            raw_fatalities.len()
        )));
    }
    Ok(derivative
        .iter()
        .zip(raw_fatalities)
        .map(|(d, r)| classify(*d, *r, tau))
        .collect())
}

fn label_range(
    series: &DyadMonthSeries,
    fit: &TrendFit,
    keep: impl Fn(Month) -> bool,
    tau: f64,
    source: FitSource,
) -> LabeledSeries {
    let raw: BTreeMap<Month, u64> = series
        .months
        .iter()
        .copied()
        .zip(series.raw_fatalities.iter().copied())
        .collect();
    let mut out = LabeledSeries {
        dyad_id: series.dyad_id.clone(),
        months: Vec::new(),
        states: Vec::new(),
        derivatives: Vec::new(),
        source_fit: source,
    };
    for (m, d) in fit.grid.iter().zip(&fit.derivative) {
        if !keep(*m) {
            continue;
        }
        let Some(r) = raw.get(m) else { continue };
        out.months.push(*m);
        out.states.push(classify(*d, *r, tau));
        out.derivatives.push(*d);
    }
    out
}

/// Train labels (months ≤ train_end) come only from `fits_train`; validation
/// labels (train_end < month ≤ val_end) only from `fits_val`.
pub fn label_windows(
    series: &[DyadMonthSeries],
    fits_train: &BTreeMap<String, TrendFit>,
    fits_val: &BTreeMap<String, TrendFit>,
    config: &LabelerConfig,
) -> Result<(Vec<LabeledSeries>, Vec<LabeledSeries>)> {
    config.validate()?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut sorted: Vec<&DyadMonthSeries> = series.iter().collect();
    sorted.sort_by(|a, b| a.dyad_id.cmp(&b.dyad_id));
    for s in sorted {
        match fits_train.get(&s.dyad_id) {
            Some(fit) => train.push(label_range(
                s,
                fit,
                |m| m <= config.train_end,
                config.tau,
                FitSource::Train,
            )),
            None => warn!("no train fit for dyad {}, skipped", s.dyad_id),
        }
        if config.val_end > config.train_end {
            match fits_val.get(&s.dyad_id) {
                Some(fit) => val.push(label_range(
                    s,
                    fit,
                    |m| m > config.train_end && m <= config.val_end,
                    config.tau,
                    FitSource::Validation,
                )),
                None => warn!("no validation fit for dyad {}, skipped", s.dyad_id),
            }
        }
    }
    Ok((train, val))
}

/// One row of `labels_{train,val}.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub dyad_id: String,
    pub month: Month,
    pub state_code: u8,
    pub state_name: String,
    pub derivative_value: f64,
}

pub fn label_rows(labels: &[LabeledSeries]) -> Vec<LabelRow> {
    labels
        .iter()
        .flat_map(|l| {
            l.months
                .iter()
                .zip(&l.states)
                .zip(&l.derivatives)
                .map(|((m, s), d)| LabelRow {
                    dyad_id: l.dyad_id.clone(),
                    month: *m,
                    state_code: s.code(),
                    state_name: s.name().to_string(),
                    derivative_value: *d,
                })
        })
        .collect()
}

pub fn write_labels_csv(path: &Path, labels: &[LabeledSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{other:?}")),
    })?;
    for row in label_rows(labels) {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{other:?}")),
    })?;
    let mut rows = Vec::new();
    for row in r.deserialize::<LabelRow>() {
        let row = row?;
        EscalationState::from_code(row.state_code)?;
        rows.push(row);
    }
    Ok(rows)
}

/// (dyad, month) → state lookup built from label rows.
pub type LabelMap = BTreeMap<(String, Month), EscalationState>;

pub fn label_map(rows: &[LabelRow]) -> LabelMap {
    rows.iter()
        .filter_map(|r| {
            EscalationState::from_code(r.state_code)
                .ok()
                .map(|s| ((r.dyad_id.clone(), r.month), s))
        })
        .collect()
}
