//! The `compare` command: risk-normalized comparison of backtest results.
//!
//! Inputs are `backtest.csv` files, directories holding one, or run output
//! directories (whose world-wide results are all taken). Every result is
//! cut to the common date range and rescaled to the same annualized
//! pre-cost volatility.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use portcon_core::analytics::PerformanceSummary;
use portcon_core::backtest::{normalize_risk, BacktestError, BacktestResult};
use serde::Serialize;

use crate::error::CliError;
use crate::report::{OutputDir, WORLD_DIR};

pub const BACKTEST_FILE: &str = "backtest.csv";

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub sharpe: Option<f64>,
    pub tstat: Option<f64>,
    pub weekly_skewness: Option<f64>,
    pub annual_vol: Option<f64>,
    pub pre_cost_sharpe: Option<f64>,
    pub risk_scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub target_vol: f64,
    /// Sorted by net Sharpe, best first.
    pub rows: Vec<ComparisonRow>,
}

/// Expands the command-line inputs to labelled backtest files.
pub fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut found = Vec::new();
    for input in inputs {
        if input.is_file() {
            found.push((label_of(input.parent().unwrap_or(Path::new("")), input), input.clone()));
        } else if input.join(BACKTEST_FILE).is_file() {
            found.push((label_of(input, input), input.join(BACKTEST_FILE)));
        } else if input.join(WORLD_DIR).is_dir() {
            let mut files = Vec::new();
            walk(&input.join(WORLD_DIR), &mut files)?;
            if files.is_empty() {
                return Err(CliError::data("compare", input.display().to_string(), "no backtest results found"));
            }
            for f in files {
                let rel = f.parent().unwrap().strip_prefix(input.join(WORLD_DIR)).unwrap().to_path_buf();
                found.push((rel.to_string_lossy().replace('\\', "/"), f));
            }
        } else {
            return Err(CliError::data(
                "compare",
                input.display().to_string(),
                "not a backtest file or result directory",
            ));
        }
    }
    // identical labels, e.g. a result compared with itself, get a suffix
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (label, _) in &mut found {
        let n = seen.entry(label.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            *label = format!("{label}#{n}");
        }
    }
    Ok(found)
}

fn label_of(dir: &Path, fallback: &Path) -> String {
    let parts: Vec<String> =
        dir.components().rev().take(2).map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    let label: Vec<String> = parts.into_iter().rev().filter(|p| p != "." && !p.is_empty()).collect();
    if label.is_empty() {
        fallback.display().to_string()
    } else {
        label.join("/")
    }
}

fn walk(dir: &Path, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::data("compare", dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for e in entries {
        if e.is_dir() {
            walk(&e, files)?;
        } else if e.file_name().is_some_and(|n| n == BACKTEST_FILE) {
            files.push(e);
        }
    }
    Ok(())
}

/// Reads a `backtest.csv`. The file keeps only the total cost, which is
/// booked as half-spread.
pub fn read_backtest(path: &Path, label: &str) -> Result<BacktestResult, CliError> {
    let ctx = || path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::data("compare", ctx(), e))?;
    let header: Vec<String> =
        reader.headers().map_err(|e| CliError::data("compare", ctx(), e))?.iter().map(str::to_string).collect();
    let expected = ["date", "pre_cost_pnl", "cost", "net_pnl", "turnover", "gross", "net_exposure"];
    if header != expected {
        return Err(CliError::data("compare", ctx(), format!("header {header:?}, expected {expected:?}")));
    }
    let mut r = BacktestResult {
        pool: String::new(),
        factor: String::new(),
        scheme: label.to_string(),
        dates: Vec::new(),
        pre_cost_pnl: Vec::new(),
        commission: Vec::new(),
        half_spread: Vec::new(),
        cost: Vec::new(),
        net_pnl: Vec::new(),
        turnover: Vec::new(),
        gross: Vec::new(),
        net_exposure: Vec::new(),
        beta_exposure: Vec::new(),
        halflife: Vec::new(),
        positions: Vec::new(),
        risk_scale: 1.0,
        fallbacks: Vec::new(),
        requested_start: None,
    };
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::data("compare", ctx(), e))?;
        let bad = |col: &str| {
            CliError::data("compare", format!("{} line {}", ctx(), line + 2), format!("cannot parse `{col}`"))
        };
        let date: NaiveDate = record[0].parse().map_err(|_| bad("date"))?;
        if r.dates.last().is_some_and(|d| *d >= date) {
            return Err(CliError::data("compare", format!("{} line {}", ctx(), line + 2), "dates not increasing"));
        }
        let num = |k: usize| record[k].parse::<f64>().map_err(|_| bad(expected[k]));
        r.dates.push(date);
        r.pre_cost_pnl.push(num(1)?);
        r.cost.push(num(2)?);
        r.commission.push(0.0);
        r.half_spread.push(num(2)?);
        r.net_pnl.push(num(3)?);
        r.turnover.push(num(4)?);
        r.gross.push(num(5)?);
        r.net_exposure.push(num(6)?);
        r.beta_exposure.push(None);
        r.halflife.push(None);
    }
    Ok(r)
}

/// Cuts the results to their common date range and normalizes their risk.
pub fn compare(results: &[BacktestResult], target_vol: f64) -> Result<(Comparison, Vec<BacktestResult>), CliError> {
    if results.len() < 2 {
        return Err(CliError::Config(format!("compare needs at least 2 results, got {}", results.len())));
    }
    let span = |r: &BacktestResult| Some((*r.dates.first()?, *r.dates.last()?));
    let mut start = NaiveDate::MIN;
    let mut end = NaiveDate::MAX;
    for r in results {
        let (a, b) = span(r).ok_or_else(|| CliError::data("compare", r.scheme.clone(), "empty result"))?;
        start = start.max(a);
        end = end.min(b);
    }
    if start > end {
        return Err(CliError::data("compare", "date ranges", "results do not overlap in time"));
    }
    let cut: Vec<BacktestResult> = results.iter().map(|r| r.between(start, end)).collect();
    let normalized = normalize_risk(&cut, target_vol).map_err(|e| match e {
        BacktestError::InvalidConfig(m) => CliError::Config(m),
        e => CliError::from_core(e.into(), format!("risk normalization over {start}..{end}")),
    })?;
    let mut rows: Vec<ComparisonRow> = normalized
        .iter()
        .map(|r| {
            let s = PerformanceSummary::of(r);
            ComparisonRow {
                label: r.scheme.clone(),
                sharpe: s.net.sharpe,
                tstat: s.net.tstat,
                weekly_skewness: s.weekly_skewness,
                annual_vol: s.pre_cost.annual_vol,
                pre_cost_sharpe: s.pre_cost.sharpe,
                risk_scale: r.risk_scale,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |r: &ComparisonRow| r.sharpe.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then_with(|| a.label.cmp(&b.label))
    });
    Ok((Comparison { start, end, target_vol, rows }, normalized))
}

/// Writes `comparison.csv`, `comparison.json` and `comparison_pnl.csv`
/// (cumulative risk-normalized net P&L, one column per result).
pub fn write_comparison(out: &mut OutputDir, cmp: &Comparison, normalized: &[BacktestResult]) -> Result<(), CliError> {
    out.write_json("comparison.json", cmp)?;
    out.write("comparison.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let err = |e: csv::Error| e.to_string();
        w.write_record(["label", "sharpe", "tstat", "weekly_skewness", "annual_vol", "pre_cost_sharpe", "risk_scale"])
            .map_err(err)?;
        for r in &cmp.rows {
            w.write_record([
                r.label.clone(),
                cell(r.sharpe),
                cell(r.tstat),
                cell(r.weekly_skewness),
                cell(r.annual_vol),
                cell(r.pre_cost_sharpe),
                r.risk_scale.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| e.to_string())
    })?;
    out.write("comparison_pnl.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        let err = |e: csv::Error| e.to_string();
        let dates: BTreeSet<NaiveDate> = normalized.iter().flat_map(|r| r.dates.iter().copied()).collect();
        let mut header = vec!["date".to_string()];
        header.extend(normalized.iter().map(|r| r.scheme.clone()));
        w.write_record(&header).map_err(err)?;
        let mut cum = vec![0.0; normalized.len()];
        let mut cursor = vec![0usize; normalized.len()];
        for d in dates {
            let mut row = vec![d.to_string()];
            for (k, r) in normalized.iter().enumerate() {
                if r.dates.get(cursor[k]) == Some(&d) {
                    cum[k] += r.net_pnl[cursor[k]];
                    cursor[k] += 1;
                }
                row.push(cum[k].to_string());
            }
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| e.to_string())
    })
}

/// Text table of the comparison rows.
pub fn format_comparison(cmp: &Comparison) -> String {
    let width = cmp.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
    let mut text = format!(
        "{} to {}, pre-cost volatility {:.1}%\n{:<width$} {:>8} {:>8} {:>9}\n",
        cmp.start,
        cmp.end,
        100.0 * cmp.target_vol,
        "label",
        "sharpe",
        "t-stat",
        "skewness"
    );
    let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"));
    for r in &cmp.rows {
        text.push_str(&format!(
            "{:<width$} {:>8} {:>8} {:>9}\n",
            r.label,
            f(r.sharpe),
            f(r.tstat),
            f(r.weekly_skewness)
        ));
    }
    text
}
