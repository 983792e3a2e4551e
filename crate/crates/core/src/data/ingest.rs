//! CSV ingestion and export.
//!
//! Prices file (long format, one row per `(date, stock)`, rows grouped by
//! ascending date):
//!
//! ```text
//! date,stock_id,close,total_return,market_cap,adv,sector
//! 2020-01-02,AAA,101.5,,2.1e9,3.4e6,Energy
//! ```
//!
//! Empty cells are missing values. `total_return` may be left empty, in
//! which case it is derived from consecutive closes.
//!
//! Optional fundamentals file:
//!
//! ```text
//! report_date,stock_id,field,value
//! 2020-02-14,AAA,net_income,1.2e8
//! ```
//!
//! where `field` is one of `net_operating_assets`, `total_assets`,
//! `total_equity`, `operating_cash_flow`, `dividends`, `net_income`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::panel::{FundamentalField, FundamentalRecord, Fundamentals, Grid, MarketPanel, PanelParts};
use super::DataError;

pub const PRICE_COLUMNS: [&str; 7] = ["date", "stock_id", "close", "total_return", "market_cap", "adv", "sector"];
pub const FUNDAMENTAL_COLUMNS: [&str; 4] = ["report_date", "stock_id", "field", "value"];

#[derive(Debug, Clone, Default)]
pub struct IngestConfig {
    /// Optional fundamentals file.
    pub fundamentals: Option<PathBuf>,
}

struct PriceRow {
    line: u64,
    date: NaiveDate,
    stock: String,
    close: Option<f64>,
    total_return: Option<f64>,
    market_cap: Option<f64>,
    adv: Option<f64>,
    sector: String,
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

/// Loads and validates a panel from the documented CSV layout.
pub fn load_panel(path: &Path, config: &IngestConfig) -> Result<MarketPanel, DataError> {
    let prices = open(path)?;
    match &config.fundamentals {
        Some(f) => read_panel(prices, Some(open(f)?)),
        None => read_panel(prices, None::<File>),
    }
}

fn column_map(headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>, DataError> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let missing: Vec<&str> = required.iter().copied().filter(|c| !names.contains(c)).collect();
    if !missing.is_empty() {
        return Err(DataError::Schema(format!(
            "header {:?} lacks required column(s) {:?}; expected {:?}",
            names, missing, required
        )));
    }
    Ok(required.iter().map(|c| names.iter().position(|n| n == c).unwrap()).collect())
}

fn csv_error(e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    DataError::Csv { line, message: e.to_string() }
}

fn parse_date(line: u64, column: &str, s: &str) -> Result<NaiveDate, DataError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| DataError::Parse {
        line,
        column: column.into(),
        value: s.into(),
    })
}

fn parse_opt(line: u64, column: &str, s: &str) -> Result<Option<f64>, DataError> {
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(DataError::Parse { line, column: column.into(), value: s.into() }),
    }
}

/// Parses a panel from readers holding the prices and (optionally) the
/// fundamentals CSV.
pub fn read_panel<R: Read, F: Read>(prices: R, fundamentals: Option<F>) -> Result<MarketPanel, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(prices);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let col = column_map(&headers, &PRICE_COLUMNS)?;

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    let mut previous: Option<NaiveDate> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| rec.get(col[k]).unwrap_or("");
        let date = parse_date(line, "date", field(0))?;
        let stock = field(1).to_string();
        if stock.is_empty() {
            return Err(DataError::Parse { line, column: "stock_id".into(), value: String::new() });
        }
        if let Some(prev) = previous {
            if date < prev {
                return Err(DataError::Ordering { line, date, previous: prev });
            }
        }
        previous = Some(date);
        if !seen.insert((date, stock.clone())) {
            return Err(DataError::Duplicate { line, date, stock });
        }
        let sector = field(6).to_string();
        if sector.is_empty() {
            return Err(DataError::Parse { line, column: "sector".into(), value: String::new() });
        }
        rows.push(PriceRow {
            line,
            date,
            stock,
            close: parse_opt(line, "close", field(2))?,
            total_return: parse_opt(line, "total_return", field(3))?,
            market_cap: parse_opt(line, "market_cap", field(4))?,
            adv: parse_opt(line, "adv", field(5))?,
            sector,
        });
    }
    if rows.is_empty() {
        return Err(DataError::Schema("prices file has no data rows".into()));
    }

    let stock_ids: Vec<String> = rows.iter().map(|r| r.stock.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let sector_names: Vec<String> =
        rows.iter().map(|r| r.sector.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
    dates.dedup();
    let stock_index: BTreeMap<&str, usize> = stock_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let date_index: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(t, d)| (*d, t)).collect();

    let (nt, ns) = (dates.len(), stock_ids.len());
    let mut close = Grid::missing(nt, ns);
    let mut total_return = Grid::missing(nt, ns);
    let mut market_cap = Grid::missing(nt, ns);
    let mut adv = Grid::missing(nt, ns);
    let mut sector: Vec<Option<usize>> = vec![None; ns];
    for r in &rows {
        let (t, i) = (date_index[&r.date], stock_index[r.stock.as_str()]);
        close.set(t, i, r.close);
        total_return.set(t, i, r.total_return);
        market_cap.set(t, i, r.market_cap);
        adv.set(t, i, r.adv);
        let s = sector_names.binary_search(&r.sector).unwrap();
        match sector[i] {
            None => sector[i] = Some(s),
            Some(prev) if prev != s => {
                return Err(DataError::Schema(format!(
                    "line {}: stock {} changes sector from {} to {}",
                    r.line, r.stock, sector_names[prev], r.sector
                )))
            }
            _ => {}
        }
    }

    let fundamentals = match fundamentals {
        Some(f) => read_fundamentals(f, &stock_index)?,
        None => Fundamentals::new(ns, []),
    };

    MarketPanel::from_parts(PanelParts {
        dates,
        stock_ids,
        close,
        total_return,
        market_cap,
        adv,
        sector: sector.into_iter().map(|s| s.unwrap()).collect(),
        sector_names,
        fundamentals,
    })
}

fn read_fundamentals<F: Read>(input: F, stock_index: &BTreeMap<&str, usize>) -> Result<Fundamentals, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let col = column_map(&headers, &FUNDAMENTAL_COLUMNS)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| rec.get(col[k]).unwrap_or("");
        let report_date = parse_date(line, "report_date", field(0))?;
        let stock = *stock_index.get(field(1)).ok_or_else(|| {
            DataError::Schema(format!("line {line}: fundamentals reference unknown stock `{}`", field(1)))
        })?;
        let kind: FundamentalField =
            field(2).parse().map_err(|_| DataError::Parse { line, column: "field".into(), value: field(2).into() })?;
        let value = parse_opt(line, "value", field(3))?.ok_or_else(|| DataError::Parse {
            line,
            column: "value".into(),
            value: String::new(),
        })?;
        if !seen.insert((report_date, stock, kind)) {
            return Err(DataError::Duplicate { line, date: report_date, stock: field(1).into() });
        }
        records.push(FundamentalRecord { report_date, stock, field: kind, value });
    }
    Ok(Fundamentals::new(stock_index.len(), records))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a panel in the documented CSV layout. Rows whose cells are all
/// missing are omitted.
pub fn write_panel(panel: &MarketPanel, prices: &Path, fundamentals: Option<&Path>) -> Result<(), DataError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source: std::io::Error| DataError::Io { path: path.clone(), source }
    };
    let mut w = csv::Writer::from_writer(File::create(prices).map_err(io_err(prices))?);
    w.write_record(PRICE_COLUMNS).map_err(csv_error)?;
    for (t, date) in panel.dates().iter().enumerate() {
        let date = date.format("%Y-%m-%d").to_string();
        for (i, id) in panel.stock_ids().iter().enumerate() {
            let cells = [
                panel.close().get(t, i),
                panel.returns().get(t, i),
                panel.market_cap().get(t, i),
                panel.adv().get(t, i),
            ];
            if cells.iter().all(Option::is_none) {
                continue;
            }
            w.write_record([
                date.as_str(),
                id,
                &fmt_opt(cells[0]),
                &fmt_opt(cells[1]),
                &fmt_opt(cells[2]),
                &fmt_opt(cells[3]),
                &panel.sector_names()[panel.sectors()[i]],
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush().map_err(io_err(prices))?;

    if let Some(path) = fundamentals {
        let mut w = csv::Writer::from_writer(File::create(path).map_err(io_err(path))?);
        w.write_record(FUNDAMENTAL_COLUMNS).map_err(csv_error)?;
        let mut records: Vec<FundamentalRecord> = panel.fundamentals().records().collect();
        records
            .sort_by(|a, b| a.report_date.cmp(&b.report_date).then(a.stock.cmp(&b.stock)).then(a.field.cmp(&b.field)));
        for r in records {
            w.write_record([
                r.report_date.format("%Y-%m-%d").to_string().as_str(),
                &panel.stock_ids()[r.stock],
                r.field.as_str(),
                &r.value.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush().map_err(io_err(path))?;
    }
    Ok(())
}
