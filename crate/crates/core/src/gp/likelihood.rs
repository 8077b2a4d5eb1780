use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::kernel::{build_gram, KernelParams};
use crate::error::{Error, Result};
use crate::ingest::DyadMonthSeries;

/// Long-term length scale (months) used as the default prior median.
pub const DEFAULT_PRIOR_MEDIAN: f64 = 122.38;
pub const DEFAULT_PRIOR_LOG_SD: f64 = 0.5;
/// Scale of the half-Normal priors on η and σ (log-fatality units).
pub const HALF_NORMAL_SD: f64 = 2.0;

/// LogNormal prior on the length scale: ln ℓ ~ Normal(log_median, log_sd).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub log_median: f64,
    pub log_sd: f64,
}

impl PriorSpec {
    pub fn from_median(median: f64, log_sd: f64) -> Result<Self> {
        if !(median > 0.0) || !median.is_finite() {
            return Err(Error::invalid(format!("prior median must be positive, got {median}")));
        }
        if !(log_sd > 0.0) || !log_sd.is_finite() {
            return Err(Error::invalid(format!("prior log_sd must be positive, got {log_sd}")));
        }
        Ok(PriorSpec {
            log_median: median.ln(),
            log_sd,
        })
    }

    pub fn median(&self) -> f64 {
        self.log_median.exp()
    }

    /// Log density of ln ℓ = `z` under Normal(log_median, log_sd).
    pub fn log_density_log_scale(&self, z: f64) -> f64 {
        normal_log_pdf(z, self.log_median, self.log_sd)
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            log_median: DEFAULT_PRIOR_MEDIAN.ln(),
            log_sd: DEFAULT_PRIOR_LOG_SD,
        }
    }
}

fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let u = (x - mean) / sd;
    -0.5 * u * u - sd.ln() - 0.5 * (2.0 * PI).ln()
}

/// Half-Normal(sd) log density of `v > 0`, plus ln v for the change of
/// variables to ln v.
pub(crate) fn half_normal_log_scale(v: f64, sd: f64) -> f64 {
    normal_log_pdf(v, 0.0, sd) + std::f64::consts::LN_2 + v.ln()
}

fn marginal_from(times: &[f64], y: &[f64], params: &KernelParams) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::invalid("log_marginal needs a non-empty series"));
    }
    let gram = build_gram(times, params)?;
    let alpha = gram.chol.solve(y);
    let quad: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let n = y.len() as f64;
    Ok(-0.5 * quad - 0.5 * gram.chol.log_det() - 0.5 * n * (2.0 * PI).ln())
}

/// Zero-mean GP log marginal likelihood of the series' log-fatalities.
pub fn log_marginal(series: &DyadMonthSeries, params: &KernelParams) -> Result<f64> {
    marginal_from(&series.times(), &series.log_fatalities, params)
}

/// Log prior over (ln ℓ, ln η, ln σ): Normal on ln ℓ, half-Normal on η and σ
/// carried into log space.
pub fn log_prior(params: &KernelParams, prior: &PriorSpec) -> f64 {
    prior.log_density_log_scale(params.length_scale.ln())
        + half_normal_log_scale(params.amplitude, HALF_NORMAL_SD)
        + half_normal_log_scale(params.noise_sd, HALF_NORMAL_SD)
}

/// Unnormalized log posterior density over the log-parameters.
pub fn log_posterior(series: &DyadMonthSeries, params: &KernelParams, prior: &PriorSpec) -> Result<f64> {
    params.validate()?;
    Ok(log_marginal(series, params)? + log_prior(params, prior))
}

pub(crate) fn log_posterior_raw(times: &[f64], y: &[f64], params: &KernelParams, prior: &PriorSpec) -> Result<f64> {
    Ok(marginal_from(times, y, params)? + log_prior(params, prior))
}

pub(crate) fn log_marginal_raw(times: &[f64], y: &[f64], params: &KernelParams) -> Result<f64> {
    marginal_from(times, y, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::month::Month;

    pub(crate) fn series(y: &[f64]) -> DyadMonthSeries {
        let start: Month = "2020-01".parse().unwrap();
        DyadMonthSeries {
            dyad_id: "A".into(),
            country_id: "C".into(),
            months: (0..y.len() as i32).map(|i| start.offset(i)).collect(),
            log_fatalities: y.to_vec(),
            raw_fatalities: y.iter().map(|v| v.exp_m1().round() as u64).collect(),
        }
    }

    #[test]
    fn single_point_closed_form() {
        let p = KernelParams::new(5.0, 1.0, 1.0).unwrap();
        let v = log_marginal(&series(&[0.0]), &p).unwrap();
        let expected = -0.5 * 2f64.ln() - 0.5 * (2.0 * PI).ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v + 1.26551).abs() < 1e-5);
    }

    #[test]
    fn zero_series_drops_quadratic_term() {
        let p = KernelParams::new(3.0, 1.2, 0.4).unwrap();
        let s = series(&[0.0; 5]);
        let g = build_gram(&s.times(), &p).unwrap();
        let expected = -0.5 * g.chol.log_det() - 2.5 * (2.0 * PI).ln();
        assert!((log_marginal(&s, &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn default_prior_median() {
        let p = PriorSpec::default();
        assert!((p.log_median - 4.807_130_958_034_395).abs() < 1e-12);
        assert!((p.median() - 122.38).abs() < 1e-9);
    }

    #[test]
    fn prior_peaks_at_median_in_log_space() {
        let p = PriorSpec::default();
        let at = p.log_density_log_scale(p.log_median);
        for dz in [-0.5, -0.01, 0.01, 0.5] {
            assert!(p.log_density_log_scale(p.log_median + dz) < at);
        }
    }

    #[test]
    fn flat_prior_limit() {
        let s = series(&[0.3, 1.0, 2.0, 1.5, 0.2]);
        let prior = PriorSpec::from_median(122.38, 1e9).unwrap();
        let diff = |l: f64| {
            let p = KernelParams::new(l, 1.0, 0.5).unwrap();
            log_posterior(&s, &p, &prior).unwrap() - log_marginal(&s, &p).unwrap()
        };
        let base = diff(1.0);
        for l in [3.0, 50.0, 1000.0] {
            assert!((diff(l) - base).abs() < 1e-9);
        }
    }
}
