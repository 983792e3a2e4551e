//! Portfolio construction for equity market-neutral factor strategies.
//!
//! The crate follows the life of a factor strategy from raw data to
//! diagnostics:
//!
//! * [`data`]: aligned daily market panels, CSV ingestion, a synthetic
//!   factor-model generator and causal liquidity-based universe selection.
//! * [`signals`]: the eleven classical equity factors and the rank map that
//!   turns them into predictors uniform in `[-1, +1]`.
//! * [`covariance`]: empirical correlation, eigenvalue clipping to a
//!   trace-preserving `k`-factor model and closed-form inverse application.
//! * [`construction`]: the FF, Neutral, Beta, Betaopt, Markowitz and
//!   cost-aware Markowitz portfolio schemes.
//! * [`backtest`]: the daily-rebalance simulation with linear costs, pool
//!   aggregation and risk normalization.
//! * [`analytics`]: Sharpe/t-stat, rolling risk, exposures,
//!   amplitude-reordered skewness and market-kink conditioning.

pub mod analytics;
pub mod backtest;
pub mod construction;
pub mod covariance;
pub mod data;
pub mod signals;
pub mod stats;

mod error;

pub use error::{Error, Result};

/// Trading days per year used for annualization.
pub const TRADING_DAYS_PER_YEAR: usize = 252;
