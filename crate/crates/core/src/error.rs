use thiserror::Error;

use crate::analytics::AnalyticsError;
use crate::backtest::BacktestError;
use crate::construction::ConstructionError;
use crate::covariance::CovarianceError;
use crate::data::DataError;
use crate::signals::SignalError;

/// Any error raised by the library, tagged with the pipeline stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("signals: {0}")]
    Signal(#[from] SignalError),
    #[error("covariance: {0}")]
    Covariance(#[from] CovarianceError),
    #[error("construction: {0}")]
    Construction(#[from] ConstructionError),
    #[error("backtest: {0}")]
    Backtest(#[from] BacktestError),
    #[error("analytics: {0}")]
    Analytics(#[from] AnalyticsError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
