#![allow(dead_code)]

use nexus_core::gp::KernelParams;
use nexus_core::ingest::DyadMonthSeries;
use nexus_core::Month;

pub fn series(y: &[f64]) -> DyadMonthSeries {
    let start: Month = "2018-01".parse().unwrap();
    DyadMonthSeries {
        dyad_id: "A".into(),
        country_id: "C".into(),
        months: (0..y.len() as i32).map(|i| start.offset(i)).collect(),
        log_fatalities: y.to_vec(),
        raw_fatalities: y.iter().map(|v| v.exp_m1().round().max(0.0) as u64).collect(),
    }
}

pub fn kernel(d: f64, l: f64, eta: f64) -> f64 {
    let r = 3f64.sqrt() * d / l;
    eta * eta * (1.0 + r) * (-r).exp()
}

/// Gaussian elimination with partial pivoting; `a` is n×n row-major.
pub fn dense_solve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| {
        let mut row = a[i * n..(i + 1) * n].to_vec();
        row.push(b[i]);
        row
    }).collect();
    for c in 0..n {
        let p = (c..n).max_by(|i, j| m[*i][c].abs().total_cmp(&m[*j][c].abs())).unwrap();
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

pub fn dense_inverse(a: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = dense_solve(a, &e);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    inv
}

pub fn gram(times: &[f64], p: &KernelParams) -> Vec<f64> {
    let n = times.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = kernel((times[i] - times[j]).abs(), p.length_scale, p.amplitude);
        }
        k[i * n + i] += p.noise_sd * p.noise_sd;
    }
    k
}

/// Posterior mean at `grid` by dense solve.
pub fn dense_posterior_mean(times: &[f64], y: &[f64], p: &KernelParams, grid: &[f64]) -> Vec<f64> {
    let alpha = dense_solve(&gram(times, p), y);
    grid.iter()
        .map(|g| {
            times.iter().zip(&alpha).map(|(t, a)| kernel((g - t).abs(), p.length_scale, p.amplitude) * a).sum()
        })
        .collect()
}

/// Analytic gradient of the log posterior over (ln l, ln eta, ln sigma):
/// 0.5 tr((αα' − K⁻¹) ∂K) plus the prior terms.
pub fn analytic_gradient(times: &[f64], y: &[f64], p: &KernelParams, log_median: f64, log_sd: f64, hn_sd: f64) -> [f64; 3] {
    let n = times.len();
    let k = gram(times, p);
    let kinv = dense_inverse(&k, n);
    let alpha = dense_solve(&k, y);
    let mut dl = vec![0.0; n * n];
    let mut de = vec![0.0; n * n];
    let mut ds = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let r = 3f64.sqrt() * (times[i] - times[j]).abs() / p.length_scale;
            let eta2 = p.amplitude * p.amplitude;
            dl[i * n + j] = eta2 * r * r * (-r).exp();
            de[i * n + j] = 2.0 * eta2 * (1.0 + r) * (-r).exp();
        }
        ds[i * n + i] = 2.0 * p.noise_sd * p.noise_sd;
    }
    let term = |dk: &[f64]| {
        let mut t = 0.0;
        for i in 0..n {
            for j in 0..n {
                t += (alpha[i] * alpha[j] - kinv[i * n + j]) * dk[j * n + i];
            }
        }
        0.5 * t
    };
    let z = p.length_scale.ln();
    [
        term(&dl) - (z - log_median) / (log_sd * log_sd),
        term(&de) - p.amplitude * p.amplitude / (hn_sd * hn_sd) + 1.0,
        term(&ds) - p.noise_sd * p.noise_sd / (hn_sd * hn_sd) + 1.0,
    ]
}
