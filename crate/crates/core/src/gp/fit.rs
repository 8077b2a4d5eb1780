use std::collections::BTreeMap;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{build_gram, cross_covariance, KernelParams};
use super::likelihood::{
    half_normal_log_scale, log_marginal_raw, log_posterior_raw, PriorSpec, HALF_NORMAL_SD,
};
use super::optimize::{maximize, AscentConfig, AscentResult, FD_STEP};
use crate::error::{Error, Result};
use crate::ingest::DyadMonthSeries;
use crate::month::Month;

/// Multipliers of the prior median used as length-scale starting points.
pub const START_MULTIPLIERS: [f64; 3] = [1.0, 0.5, 2.0];

const LOG_LENGTH_BOUNDS: (f64, f64) = (-0.693_147_180_559_945_3, 9.210_340_371_976_184); // [0.5, 1e4]
const LOG_SCALE_BOUNDS: (f64, f64) = (-6.907_755_278_982_137, 4.605_170_185_988_092); // [1e-3, 1e2]

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            length_scale: super::likelihood::DEFAULT_PRIOR_MEDIAN,
            amplitude: 1.0,
            noise_sd: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub dyad_id: String,
    pub params: KernelParams,
    pub grid: Vec<Month>,
    pub mean: Vec<f64>,
    pub derivative: Vec<f64>,
    pub log_posterior: f64,
}

/// Flat on-disk layout of `trend_fit.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendFitFile {
    pub dyad_id: String,
    pub length_scale: f64,
    pub amplitude: f64,
    pub noise_sd: f64,
    pub grid: Vec<Month>,
    pub mean: Vec<f64>,
    pub derivative: Vec<f64>,
    pub log_posterior: f64,
}

impl From<&TrendFit> for TrendFitFile {
    fn from(f: &TrendFit) -> Self {
        TrendFitFile {
            dyad_id: f.dyad_id.clone(),
            length_scale: f.params.length_scale,
            amplitude: f.params.amplitude,
            noise_sd: f.params.noise_sd,
            grid: f.grid.clone(),
            mean: f.mean.clone(),
            derivative: f.derivative.clone(),
            log_posterior: f.log_posterior,
        }
    }
}

impl TryFrom<TrendFitFile> for TrendFit {
    type Error = Error;

    fn try_from(f: TrendFitFile) -> Result<Self> {
        if f.mean.len() != f.grid.len() || f.derivative.len() != f.grid.len() {
            return Err(Error::Length(format!("trend fit for {} has ragged arrays", f.dyad_id)));
        }
        Ok(TrendFit {
            params: KernelParams::new(f.length_scale, f.amplitude, f.noise_sd)?,
            dyad_id: f.dyad_id,
            grid: f.grid,
            mean: f.mean,
            derivative: f.derivative,
            log_posterior: f.log_posterior,
        })
    }
}

/// Outcome of one optimizer start.
#[derive(Clone, Debug)]
pub struct StartOutcome {
    pub start: KernelParams,
    pub result: Option<AscentResult>,
}

#[derive(Clone, Debug)]
pub struct MapFit {
    pub params: KernelParams,
    pub log_posterior: f64,
    /// Accepted-step objective trace of the winning start.
    pub trace: Vec<f64>,
    pub starts: Vec<StartOutcome>,
}

fn ascent_config(n_params: usize) -> AscentConfig {
    let mut lower = vec![LOG_SCALE_BOUNDS.0; n_params];
    let mut upper = vec![LOG_SCALE_BOUNDS.1; n_params];
    lower[0] = LOG_LENGTH_BOUNDS.0;
    upper[0] = LOG_LENGTH_BOUNDS.1;
    AscentConfig {
        fd_step: FD_STEP,
        max_iter: 300,
        grad_tol: 1e-6,
        lower,
        upper,
    }
}

fn objective<'a>(times: &'a [f64], y: &'a [f64], prior: &PriorSpec) -> impl Fn(&[f64]) -> f64 + 'a {
    let prior = *prior;
    move |z: &[f64]| {
        let p = KernelParams::from_log(z);
        log_posterior_raw(times, y, &p, &prior).unwrap_or(f64::NEG_INFINITY)
    }
}

/// MAP kernel parameters with diagnostics for every start.
pub fn fit_map_detailed(series: &DyadMonthSeries, prior: &PriorSpec, init: &KernelParams) -> Result<MapFit> {
    if series.len() < 4 {
        return Err(Error::invalid(format!(
            "fit_map needs at least 4 months, {} has {}",
            series.dyad_id,
            series.len()
        )));
    }
    init.validate()?;
    let times = series.times();
    let f = objective(&times, &series.log_fatalities, prior);
    let cfg = ascent_config(3);

    let starts: Vec<StartOutcome> = START_MULTIPLIERS
        .iter()
        .map(|m| {
            let start = KernelParams {
                length_scale: prior.median() * m,
                ..*init
            };
            let result = maximize(&f, &start.to_log(), &cfg);
            StartOutcome { start, result }
        })
        .collect();

    let best = starts
        .iter()
        .filter_map(|s| s.result.as_ref())
        .filter(|r| r.value.is_finite())
        .fold(None::<&AscentResult>, |acc, r| match acc {
            Some(a) if a.value >= r.value => Some(a),
            _ => Some(r),
        });
    let Some(best) = best else {
        let detail = starts
            .iter()
            .map(|s| format!("start l={:.3}: non-finite objective", s.start.length_scale))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Divergence(format!("{}: {detail}", series.dyad_id)));
    };
    debug!(
        "{}: MAP l={:.3} after {} iterations (converged={})",
        series.dyad_id,
        best.x[0].exp(),
        best.iterations,
        best.converged
    );
    Ok(MapFit {
        params: KernelParams::from_log(&best.x),
        log_posterior: best.value,
        trace: best.trace.clone(),
        starts,
    })
}

pub fn fit_map(series: &DyadMonthSeries, prior: &PriorSpec, init: &KernelParams) -> Result<KernelParams> {
    fit_map_detailed(series, prior, init).map(|m| m.params)
}

/// GP predictive mean K(grid, X)(K(X,X) + σ²I)⁻¹ y with zero prior mean.
pub fn posterior_mean(series: &DyadMonthSeries, params: &KernelParams, grid: &[f64]) -> Result<Vec<f64>> {
    let times = series.times();
    let gram = build_gram(&times, params)?;
    let alpha = gram.chol.solve(&series.log_fatalities);
    let cross = cross_covariance(grid, &times, params);
    let n = times.len();
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, _)| cross[i * n..(i + 1) * n].iter().zip(&alpha).map(|(k, a)| k * a).sum())
        .collect())
}

/// Central differences inside, one-sided at both ends (unit month spacing).
pub fn derivative(mean: &[f64]) -> Result<Vec<f64>> {
    let n = mean.len();
    if n < 2 {
        return Err(Error::invalid("derivative needs at least two points"));
    }
    let mut d = Vec::with_capacity(n);
    d.push(mean[1] - mean[0]);
    for t in 1..n - 1 {
        d.push((mean[t + 1] - mean[t - 1]) / 2.0);
    }
    d.push(mean[n - 1] - mean[n - 2]);
    Ok(d)
}

/// Posterior mean and derivative on the series' own monthly grid.
pub fn trend_from_params(series: &DyadMonthSeries, params: KernelParams, log_posterior: f64) -> Result<TrendFit> {
    let mean = posterior_mean(series, &params, &series.times())?;
    let derivative = derivative(&mean)?;
    if mean.iter().chain(&derivative).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trend fit"));
    }
    Ok(TrendFit {
        dyad_id: series.dyad_id.clone(),
        params,
        grid: series.months.clone(),
        mean,
        derivative,
        log_posterior,
    })
}

pub fn fit_trend(series: &DyadMonthSeries, prior: &PriorSpec, init: &KernelParams) -> Result<TrendFit> {
    let map = fit_map_detailed(series, prior, init)?;
    trend_from_params(series, map.params, map.log_posterior)
}

/// Result of the country-level stage of hierarchical fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountryScale {
    pub country_id: String,
    pub length_scale: f64,
    pub dyads: Vec<String>,
}

/// Country ℓ_c maximizing Σ_d log_marginal_d + global prior on ℓ_c, with
/// per-dyad η and σ fitted jointly.
fn fit_country_scale(members: &[&DyadMonthSeries], prior: &PriorSpec, init: &KernelParams) -> Result<f64> {
    let data: Vec<(Vec<f64>, &[f64])> = members
        .iter()
        .map(|s| (s.times(), s.log_fatalities.as_slice()))
        .collect();
    let k = members.len();
    let f = |z: &[f64]| {
        let mut total = prior.log_density_log_scale(z[0]);
        for (d, (t, y)) in data.iter().enumerate() {
            let p = KernelParams::from_log(&[z[0], z[1 + 2 * d], z[2 + 2 * d]]);
            match log_marginal_raw(t, y, &p) {
                Ok(v) => {
                    total += v
                        + half_normal_log_scale(p.amplitude, HALF_NORMAL_SD)
                        + half_normal_log_scale(p.noise_sd, HALF_NORMAL_SD)
                }
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        total
    };
    let cfg = ascent_config(1 + 2 * k);
    let mut best: Option<AscentResult> = None;
    for m in START_MULTIPLIERS {
        let mut x0 = vec![(prior.median() * m).ln()];
        for _ in 0..k {
            x0.push(init.amplitude.ln());
            x0.push(init.noise_sd.ln());
        }
        if let Some(r) = maximize(&f, &x0, &cfg) {
            if best.as_ref().is_none_or(|b| r.value > b.value) {
                best = Some(r);
            }
        }
    }
    let best = best.ok_or_else(|| Error::Divergence("country-level fit: all starts non-finite".into()))?;
    Ok(best.x[0].exp())
}

/// Two-stage partial pooling of ℓ within countries. Countries with a single
/// dyad fall back to `fit_map` under the global prior.
pub fn fit_hierarchical(
    series: &[DyadMonthSeries],
    prior: &PriorSpec,
    init: &KernelParams,
) -> Result<(BTreeMap<String, TrendFit>, Vec<CountryScale>)> {
    let mut by_country: BTreeMap<&str, Vec<&DyadMonthSeries>> = BTreeMap::new();
    for s in series {
        if s.country_id.is_empty() {
            return Err(Error::invalid(format!("dyad {} has no country_id", s.dyad_id)));
        }
        by_country.entry(s.country_id.as_str()).or_default().push(s);
    }

    // Stage 1 is a barrier: all country scales before any dyad fit.
    let stage1: Vec<(&str, Option<CountryScale>)> = by_country
        .par_iter()
        .map(|(country, members)| {
            if members.len() < 2 {
                return Ok((*country, None));
            }
            let l = fit_country_scale(members, prior, init)?;
            Ok((
                *country,
                Some(CountryScale {
                    country_id: country.to_string(),
                    length_scale: l,
                    dyads: members.iter().map(|s| s.dyad_id.clone()).collect(),
                }),
            ))
        })
        .collect::<Result<_>>()?;

    let mut jobs: Vec<(&DyadMonthSeries, PriorSpec, KernelParams)> = Vec::new();
    let mut countries = Vec::new();
    for (country, scale) in stage1 {
        let members = &by_country[country];
        match scale {
            None => {
                for s in members {
                    jobs.push((s, *prior, *init));
                }
            }
            Some(cs) => {
                let local = PriorSpec {
                    log_median: cs.length_scale.ln(),
                    log_sd: prior.log_sd / 2.0,
                };
                for s in members {
                    jobs.push((s, local, *init));
                }
                countries.push(cs);
            }
        }
    }

    let fits: Vec<TrendFit> = jobs
        .par_iter()
        .map(|(s, p, i)| fit_trend(s, p, i))
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for f in fits {
        if out.insert(f.dyad_id.clone(), f).is_some() {
            warn!("duplicate dyad id in hierarchical fit input");
        }
    }
    Ok((out, countries))
}

/// Independent per-dyad fits under the global prior.
pub fn fit_independent(
    series: &[DyadMonthSeries],
    prior: &PriorSpec,
    init: &KernelParams,
) -> Result<BTreeMap<String, TrendFit>> {
    let fits: Vec<TrendFit> = series
        .par_iter()
        .map(|s| fit_trend(s, prior, init))
        .collect::<Result<_>>()?;
    Ok(fits.into_iter().map(|f| (f.dyad_id.clone(), f)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(y: &[f64]) -> DyadMonthSeries {
        let start: Month = "2015-01".parse().unwrap();
        DyadMonthSeries {
            dyad_id: "A".into(),
            country_id: "C".into(),
            months: (0..y.len() as i32).map(|i| start.offset(i)).collect(),
            log_fatalities: y.to_vec(),
            raw_fatalities: y.iter().map(|v| v.exp_m1().round().max(0.0) as u64).collect(),
        }
    }

    #[test]
    fn derivative_examples() {
        let lin: Vec<f64> = (0..6).map(|t| 0.5 * t as f64).collect();
        assert!(derivative(&lin).unwrap().iter().all(|d| (d - 0.5).abs() < 1e-15));
        assert!(derivative(&[2.0; 4]).unwrap().iter().all(|d| *d == 0.0));
        assert_eq!(derivative(&[0.0, 1.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(derivative(&[1.0]).is_err());
    }

    #[test]
    fn zero_series_zero_mean() {
        let s = series(&[0.0; 6]);
        let p = KernelParams::new(4.0, 1.0, 0.3).unwrap();
        assert!(posterior_mean(&s, &p, &s.times()).unwrap().iter().all(|m| *m == 0.0));
    }

    #[test]
    fn near_noiseless_interpolates() {
        let s = series(&[0.5, 1.7, 2.2, 0.9, 0.0, 3.1]);
        let p = KernelParams::new(3.0, 2.0, 1e-6).unwrap();
        let m = posterior_mean(&s, &p, &s.times()).unwrap();
        for (a, b) in m.iter().zip(&s.log_fatalities) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn too_short_series_rejected() {
        let s = series(&[1.0, 2.0, 3.0]);
        assert!(fit_map(&s, &PriorSpec::default(), &KernelParams::default()).is_err());
    }

    #[test]
    fn constant_series_runs() {
        let s = series(&[2.0; 24]);
        let fit = fit_trend(&s, &PriorSpec::default(), &KernelParams::default()).unwrap();
        assert!(fit.log_posterior.is_finite());
        for m in &fit.mean {
            assert!(*m > 0.0 && *m <= 2.0 * (1.0 + 1e-4), "{:?} {:?}", fit.params, fit.mean);
        }
    }

    #[test]
    fn single_dyad_country_matches_fit_map() {
        let y: Vec<f64> = (0..30).map(|t| (t as f64 / 5.0).sin() + 2.0).collect();
        let s = series(&y);
        let prior = PriorSpec::default();
        let init = KernelParams::default();
        let (fits, countries) = fit_hierarchical(std::slice::from_ref(&s), &prior, &init).unwrap();
        assert!(countries.is_empty());
        let direct = fit_map(&s, &prior, &init).unwrap();
        assert_eq!(fits["A"].params, direct);
    }

    #[test]
    fn identical_series_get_identical_scales() {
        let y: Vec<f64> = (0..30).map(|t| (t as f64 / 4.0).sin() * 1.5 + 2.0).collect();
        let mut a = series(&y);
        let mut b = series(&y);
        a.dyad_id = "A".into();
        b.dyad_id = "B".into();
        let (fits, countries) =
            fit_hierarchical(&[a, b], &PriorSpec::default(), &KernelParams::default()).unwrap();
        assert_eq!(countries.len(), 1);
        let (la, lb) = (fits["A"].params.length_scale, fits["B"].params.length_scale);
        assert!((la - lb).abs() <= 1e-9 * la, "{la} vs {lb}");
    }

    #[test]
    fn trend_file_round_trip() {
        let s = series(&[0.0, 1.0, 2.0, 1.0, 0.5]);
        let p = KernelParams::new(5.0, 1.0, 0.5).unwrap();
        let fit = trend_from_params(&s, p, -3.0).unwrap();
        let file = TrendFitFile::from(&fit);
        let json = serde_json::to_string(&file).unwrap();
        let back: TrendFit = serde_json::from_str::<TrendFitFile>(&json).unwrap().try_into().unwrap();
        assert_eq!(back, fit);
    }
}
