use serde::{Deserialize, Serialize};

use super::linalg::Cholesky;
use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Base diagonal jitter, relative to η².
pub const JITTER_BASE: f64 = 1e-8;
/// Number of ×10 escalations tried after the base jitter.
pub const JITTER_ESCALATIONS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// ℓ, in months.
    pub length_scale: f64,
    /// η.
    pub amplitude: f64,
    /// σ, the observation noise standard deviation.
    pub noise_sd: f64,
}

impl KernelParams {
    pub fn new(length_scale: f64, amplitude: f64, noise_sd: f64) -> Result<Self> {
        let p = KernelParams {
            length_scale,
            amplitude,
            noise_sd,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("length_scale", self.length_scale),
            ("amplitude", self.amplitude),
            ("noise_sd", self.noise_sd),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// (ln ℓ, ln η, ln σ).
    pub fn to_log(&self) -> [f64; 3] {
        [self.length_scale.ln(), self.amplitude.ln(), self.noise_sd.ln()]
    }

    pub fn from_log(z: &[f64]) -> Self {
        KernelParams {
            length_scale: z[0].exp(),
            amplitude: z[1].exp(),
            noise_sd: z[2].exp(),
        }
    }
}

/// Matérn 3/2 covariance η²(1 + √3 d/ℓ) exp(−√3 d/ℓ).
pub fn matern32(distance: f64, length_scale: f64, amplitude: f64) -> Result<f64> {
    if !distance.is_finite() || !length_scale.is_finite() || !amplitude.is_finite() {
        return Err(Error::NonFinite("matern32 input"));
    }
    if distance < 0.0 || length_scale <= 0.0 || amplitude <= 0.0 {
        return Err(Error::invalid(format!(
            "matern32 requires d >= 0, l > 0, eta > 0 (got {distance}, {length_scale}, {amplitude})"
        )));
    }
    Ok(matern32_unchecked(distance, length_scale, amplitude))
}

#[inline]
pub(crate) fn matern32_unchecked(distance: f64, length_scale: f64, amplitude: f64) -> f64 {
    let r = SQRT3 * distance / length_scale;
    amplitude * amplitude * (1.0 + r) * (-r).exp()
}

/// Covariance K(X,X) + σ²I with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct Gram {
    pub n: usize,
    /// Row-major matrix, without the jitter that factorization may have needed.
    pub matrix: Vec<f64>,
    pub chol: Cholesky,
    /// 0 = no jitter, k ≥ 1 = 1e-8·η²·10^(k−1) added to the diagonal.
    pub jitter_level: usize,
}

pub fn cross_covariance(a: &[f64], b: &[f64], params: &KernelParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        for &y in b {
            out.push(matern32_unchecked((x - y).abs(), params.length_scale, params.amplitude));
        }
    }
    out
}

/// Noise σ = 0 is accepted here (noiseless Gram); ℓ and η must be positive.
pub fn build_gram(times: &[f64], params: &KernelParams) -> Result<Gram> {
    let zero_noise = KernelParams {
        noise_sd: 1.0,
        ..*params
    };
    zero_noise.validate()?;
    if !(params.noise_sd >= 0.0) || !params.noise_sd.is_finite() {
        return Err(Error::invalid(format!("noise_sd must be >= 0, got {}", params.noise_sd)));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("gram times"));
    }
    let n = times.len();
    let mut matrix = cross_covariance(times, times, params);
    let noise = params.noise_sd * params.noise_sd;
    for i in 0..n {
        matrix[i * n + i] += noise;
    }

    if let Some(chol) = Cholesky::factor(&matrix, n) {
        return Ok(Gram {
            n,
            matrix,
            chol,
            jitter_level: 0,
        });
    }
    let eta2 = params.amplitude * params.amplitude;
    let mut jittered = matrix.clone();
    for level in 1..=(JITTER_ESCALATIONS + 1) {
        let jitter = JITTER_BASE * eta2 * 10f64.powi(level as i32 - 1);
        for i in 0..n {
            jittered[i * n + i] = matrix[i * n + i] + jitter;
        }
        if let Some(chol) = Cholesky::factor(&jittered, n) {
            return Ok(Gram {
                n,
                matrix,
                chol,
                jitter_level: level,
            });
        }
    }
    Err(Error::Factorization {
        attempts: JITTER_ESCALATIONS,
    })
}
