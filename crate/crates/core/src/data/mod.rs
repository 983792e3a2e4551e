//! Market data: the aligned daily panel, CSV ingestion, the synthetic
//! factor-model generator and causal universe selection.

mod ingest;
mod panel;
mod synthetic;
mod universe;

pub use ingest::{load_panel, read_panel, write_panel, IngestConfig, FUNDAMENTAL_COLUMNS, PRICE_COLUMNS};
pub use panel::{FundamentalField, FundamentalRecord, Fundamentals, Grid, MarketPanel, PanelParts};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use universe::{
    cap_weighted_index_returns, select_universe, Quarter, QuarterUniverse, Universe, UniverseConfig, ADV_WINDOW,
};

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("line {line}: cannot parse column `{column}` value {value:?}")]
    Parse { line: u64, column: String, value: String },
    #[error("line {line}: date {date} precedes previous row date {previous}")]
    Ordering { line: u64, date: NaiveDate, previous: NaiveDate },
    #[error("line {line}: duplicate row for ({date}, {stock})")]
    Duplicate { line: u64, date: NaiveDate, stock: String },
    #[error("invalid panel: {0}")]
    Invariant(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("warm-up: no quarter has {required} trading days of ADV history (warm-up quarters: {quarters:?})")]
    WarmUp { required: usize, quarters: Vec<String> },
}
