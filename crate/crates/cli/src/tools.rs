//! The `gen-data` and `kinks` commands.

use std::path::Path;

use chrono::NaiveDate;
use portcon_core::analytics::{conditional_performance, detect_kinks, weekly_last, weekly_sum, KinkConfig, KinkEvent};
use portcon_core::data::{generate_synthetic, write_panel, SyntheticSpec};
use serde::Serialize;

use crate::compare::read_backtest;
use crate::error::CliError;
use crate::report::{self, OutputDir};

pub const PRICES_FILE: &str = "prices.csv";
pub const FUNDAMENTALS_FILE: &str = "fundamentals.csv";

/// Writes a synthetic panel as `prices.csv` and `fundamentals.csv`, with
/// the generator parameters in `synthetic_spec.json`.
pub fn gen_data(spec: &SyntheticSpec, out: &mut OutputDir) -> Result<(), CliError> {
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let panel = generate_synthetic(spec).map_err(|e| CliError::from_core(e.into(), "gen-data"))?;
    out.write_json("synthetic_spec.json", spec)?;
    let prices = out.root().join(PRICES_FILE);
    let fundamentals = out.root().join(FUNDAMENTALS_FILE);
    write_panel(&panel, &prices, Some(&fundamentals)).map_err(|e| CliError::output(out.root(), e))?;
    Ok(())
}

/// Daily or weekly index closes from a `date,close` CSV.
pub fn read_index(path: &Path) -> Result<(Vec<NaiveDate>, Vec<f64>), CliError> {
    let ctx = |line: usize| format!("{} line {line}", path.display());
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| CliError::data("kinks", path.display().to_string(), e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::data("kinks", path.display().to_string(), e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["date", "close"] {
        return Err(CliError::data(
            "kinks",
            path.display().to_string(),
            format!("header {header:?}, expected [\"date\", \"close\"]"),
        ));
    }
    let (mut dates, mut closes) = (Vec::new(), Vec::new());
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| CliError::data("kinks", ctx(line), e))?;
        let date: NaiveDate =
            record[0].parse().map_err(|_| CliError::data("kinks", ctx(line), "cannot parse `date`"))?;
        let close: f64 = record[1].parse().map_err(|_| CliError::data("kinks", ctx(line), "cannot parse `close`"))?;
        if !(close > 0.0) || !close.is_finite() {
            return Err(CliError::data("kinks", ctx(line), format!("close {close} must be positive")));
        }
        if dates.last().is_some_and(|d| *d >= date) {
            return Err(CliError::data("kinks", ctx(line), "dates not increasing"));
        }
        dates.push(date);
        closes.push(close);
    }
    Ok((dates, closes))
}

#[derive(Debug, Clone, Serialize)]
pub struct KinkSummary {
    pub weeks: usize,
    pub events: Vec<KinkEvent>,
    pub suppressed: Vec<NaiveDate>,
}

/// Kinks of an index, with the conditional performance of a strategy when
/// a backtest file is given.
pub fn kinks(
    index: &Path,
    pnl: Option<&Path>,
    thresholds: &[f64],
    config: &KinkConfig,
    out: &mut OutputDir,
) -> Result<KinkSummary, CliError> {
    if thresholds.is_empty() || thresholds.iter().any(|n| !(*n > 0.0) || !n.is_finite()) {
        return Err(CliError::Config("thresholds must be positive".into()));
    }
    let (dates, closes) = read_index(index)?;
    let weekly = weekly_last(&dates, &closes.iter().map(|c| Some(*c)).collect::<Vec<_>>());
    let n_min = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    let report = detect_kinks(&weekly.dates, &weekly.values, n_min, config)
        .map_err(|e| CliError::from_core(e.into(), index.display().to_string()))?;
    out.write("kinks.csv", |w| report::write_kinks(w, &report.events, thresholds))?;
    if let Some(p) = pnl {
        let r = read_backtest(p, "strategy")?;
        let strategy = weekly_sum(&r.dates, &r.net_pnl);
        let traded: std::collections::BTreeSet<(i32, u32)> = strategy.weeks.iter().copied().collect();
        let events: Vec<KinkEvent> = report
            .events
            .iter()
            .filter(|e| e.eval_window.clone().all(|w| traded.contains(&weekly.weeks[w])))
            .cloned()
            .collect();
        let rows = conditional_performance(&strategy.aligned_to(&weekly, 0.0), &events, thresholds)
            .map_err(|e| CliError::from_core(e.into(), p.display().to_string()))?;
        out.write("conditional.csv", |w| report::write_conditional(w, &rows))?;
    }
    let summary = KinkSummary { weeks: weekly.len(), events: report.events, suppressed: report.suppressed };
    out.write_json("kinks.json", &summary)?;
    Ok(summary)
}
