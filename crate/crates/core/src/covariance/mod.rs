//! Empirical correlation, eigenvalue clipping and beta estimation.
//!
//! The cleaned covariance keeps the `k` largest eigenpairs of the
//! correlation matrix and replaces the rest of the spectrum by a flat
//! residual chosen so that the total variance is unchanged:
//!
//! ```text
//! C_ij = sigma_i sigma_j ( sum_{a<=k} lambda_a v_ai v_aj + eps2 delta_ij )
//! Tr C = sum_i sigma_i^2
//! ```
//!
//! With equal volatilities this gives `eps2 = (N - sum_{a<=k} lambda_a) / N`.

mod beta;
mod estimate;
mod spectral;

pub use beta::{compute_beta, first_factor_beta, BetaEstimator, BetaMethod, BetaSource, BetaVector, BETA_WINDOW};
pub use estimate::{estimate_correlation, CorrelationConfig, CorrelationEstimate, DEFAULT_WINDOW, MIN_OBSERVATIONS};
pub use spectral::{clip_spectrum, CorrelationSpectrum, SpectralCovariance};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CovarianceError {
    #[error("insufficient history: need {required} days before index {end}")]
    InsufficientHistory { required: usize, end: usize },
    #[error("insufficient data: {usable} stock(s) with at least {min_obs} observations, need 2")]
    InsufficientData { usable: usize, min_obs: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("estimation error: {0}")]
    Estimation(String),
}
