//! Gaussian-process trend extraction with a Matérn 3/2 kernel.
//!
//! Hyperparameters are fitted by MAP in log-parameter space under a
//! LogNormal prior on the length scale, optionally pooled within countries.
//! The fitted posterior mean and its numerical derivative feed the state
//! labeler.

mod fit;
mod kernel;
pub mod linalg;
mod likelihood;
pub mod optimize;

pub use fit::{
    derivative, fit_hierarchical, fit_independent, fit_map, fit_map_detailed, fit_trend,
    posterior_mean, trend_from_params, CountryScale, MapFit, StartOutcome, TrendFit, TrendFitFile,
    START_MULTIPLIERS,
};
pub use kernel::{
    build_gram, cross_covariance, matern32, Gram, KernelParams, JITTER_BASE, JITTER_ESCALATIONS,
};
pub use likelihood::{
    log_marginal, log_posterior, log_prior, PriorSpec, DEFAULT_PRIOR_LOG_SD, DEFAULT_PRIOR_MEDIAN,
    HALF_NORMAL_SD,
};
