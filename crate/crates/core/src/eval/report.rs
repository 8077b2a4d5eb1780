use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{bootstrap_ci, dyad_month_mean, per_class_binary_report, ForecastRecord, Metric};
use crate::error::{Error, Result};
use crate::labeler::EscalationState;
use crate::month::Month;
use crate::rng::derive_seed;

/// Model and aligned baseline records of one (step, kind) combination.
#[derive(Clone, Debug)]
pub struct Combination {
    pub step: usize,
    pub kind: String,
    pub model: Vec<ForecastRecord>,
    pub baseline: Vec<ForecastRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            n_boot: 1000,
            level: 0.95,
            seed: 17,
        }
    }
}

/// One line of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub kind: String,
    pub source: String,
    pub metric: String,
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Serialize)]
struct ClassRow<'a> {
    step: usize,
    kind: &'a str,
    source: &'a str,
    class: &'static str,
    ap: Option<f64>,
    auroc: Option<f64>,
}

#[derive(Serialize)]
struct GridRow {
    month: Month,
    p0: f64,
    p1: f64,
    p2: f64,
    p3: f64,
    actual: u8,
}

fn check_structure(c: &Combination) -> Result<()> {
    let keys = |rs: &[ForecastRecord]| {
        let mut k: Vec<_> = rs.iter().map(|r| (r.key(), r.actual)).collect();
        k.sort();
        k
    };
    if keys(&c.model) != keys(&c.baseline) {
        return Err(Error::invalid(format!(
            "step {} kind {}: model and baseline records cover different dyad-months",
            c.step, c.kind
        )));
    }
    Ok(())
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{other:?}")),
    })
}

/// Writes `metrics.csv`, `per_class.csv` and per-dyad probability grids
/// (under `grids/{step}_{kind}/`) for every combination. Metrics are
/// reported per digest row and per dyad-month mean, for model and baseline.
pub fn emit_report(combos: &[Combination], out: &Path, config: &ReportConfig) -> Result<Vec<MetricRow>> {
    for c in combos {
        check_structure(c)?;
        for r in c.model.iter().chain(&c.baseline) {
            r.validate()?;
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    let mut metrics = writer(&out.join("metrics.csv"))?;
    let classes_path = out.join("per_class.csv");
    let mut classes = writer(&classes_path)?;

    for c in combos {
        let model_mean = dyad_month_mean(&c.model);
        let sets: [(&str, &[ForecastRecord]); 4] = [
            ("model", &c.model),
            ("baseline", &c.baseline),
            ("model_dmmean", &model_mean),
            ("baseline_dmmean", &dyad_month_mean(&c.baseline)),
        ];
        for (source, records) in sets {
            if records.is_empty() {
                continue;
            }
            for metric in Metric::ALL {
                let seed = derive_seed(config.seed, &format!("{}|{}|{source}|{}", c.step, c.kind, metric.name()));
                let ci = bootstrap_ci(records, |r| metric.compute(r), config.n_boot, config.level, seed);
                let row = match ci {
                    Ok(ci) => MetricRow {
                        step: c.step,
                        kind: c.kind.clone(),
                        source: source.to_string(),
                        metric: metric.name().to_string(),
                        point: ci.point,
                        lo: ci.lower,
                        hi: ci.upper,
                        n: ci.n_records,
                    },
                    Err(e) => {
                        log::warn!("step {} {} {source} {}: {e}", c.step, c.kind, metric.name());
                        MetricRow {
                            step: c.step,
                            kind: c.kind.clone(),
                            source: source.to_string(),
                            metric: metric.name().to_string(),
                            point: f64::NAN,
                            lo: f64::NAN,
                            hi: f64::NAN,
                            n: records.len(),
                        }
                    }
                };
                metrics.serialize(&row)?;
                rows.push(row);
            }
            for class in EscalationState::ALL {
                let rep = per_class_binary_report(records, class).ok();
                classes.serialize(ClassRow {
                    step: c.step,
                    kind: &c.kind,
                    source,
                    class: class.name(),
                    ap: rep.map(|r| r.ap),
                    auroc: rep.map(|r| r.auroc),
                })?;
            }
        }
        write_grids(&out.join("grids").join(format!("{}_{}", c.step, c.kind)), &model_mean)?;
    }
    metrics.flush().map_err(|e| Error::io(out, e))?;
    classes.flush().map_err(|e| Error::io(&classes_path, e))?;
    Ok(rows)
}

fn write_grids(dir: &Path, records: &[ForecastRecord]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut by_dyad: BTreeMap<&str, Vec<&ForecastRecord>> = BTreeMap::new();
    for r in records {
        by_dyad.entry(&r.dyad_id).or_default().push(r);
    }
    for (dyad, mut rs) in by_dyad {
        rs.sort_by_key(|r| r.month);
        let safe: String = dyad
            .chars()
            .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '_' })
            .collect();
        let mut w = writer(&dir.join(format!("dyad_grid_{safe}.csv")))?;
        for r in rs {
            let [p0, p1, p2, p3] = r.probabilities;
            w.serialize(GridRow {
                month: r.month,
                p0,
                p1,
                p2,
                p3,
                actual: r.actual.code(),
            })?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}
