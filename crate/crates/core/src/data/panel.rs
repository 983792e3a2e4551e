use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::DataError;

/// Dense `[date × stock]` matrix with explicit missing cells.
///
/// Missing cells are stored as NaN internally but never handed out as
/// numbers: [`Grid::get`] returns `None` for them.
#[derive(Debug, Clone)]
pub struct Grid {
    n_dates: usize,
    n_stocks: usize,
    values: Vec<f64>,
}

impl Grid {
    /// A grid where every cell is missing.
    pub fn missing(n_dates: usize, n_stocks: usize) -> Self {
        Self { n_dates, n_stocks, values: vec![f64::NAN; n_dates * n_stocks] }
    }

    pub fn n_dates(&self) -> usize {
        self.n_dates
    }

    pub fn n_stocks(&self) -> usize {
        self.n_stocks
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        let v = self.values[t * self.n_stocks + i];
        (!v.is_nan()).then_some(v)
    }

    #[inline]
    pub fn is_present(&self, t: usize, i: usize) -> bool {
        !self.values[t * self.n_stocks + i].is_nan()
    }

    /// Sets a cell; `None` (or a NaN) marks it missing.
    #[inline]
    pub fn set(&mut self, t: usize, i: usize, v: Option<f64>) {
        self.values[t * self.n_stocks + i] = v.unwrap_or(f64::NAN);
    }

    /// Values of stock `i` over the date range, in date order.
    pub fn column(&self, i: usize, dates: std::ops::Range<usize>) -> impl Iterator<Item = Option<f64>> + '_ {
        dates.map(move |t| self.get(t, i))
    }

    /// Present values of stock `i` over the date range, in date order.
    pub fn present(&self, i: usize, dates: std::ops::Range<usize>) -> Vec<f64> {
        self.column(i, dates).flatten().collect()
    }

    /// Number of present cells.
    pub fn count_present(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }
}

impl PartialEq for Grid {
    /// Bit-level equality; two missing cells compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.n_dates == other.n_dates
            && self.n_stocks == other.n_stocks
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FundamentalField {
    NetOperatingAssets,
    TotalAssets,
    TotalEquity,
    OperatingCashFlow,
    Dividends,
    NetIncome,
}

impl FundamentalField {
    pub const ALL: [FundamentalField; 6] = [
        FundamentalField::NetOperatingAssets,
        FundamentalField::TotalAssets,
        FundamentalField::TotalEquity,
        FundamentalField::OperatingCashFlow,
        FundamentalField::Dividends,
        FundamentalField::NetIncome,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FundamentalField::NetOperatingAssets => "net_operating_assets",
            FundamentalField::TotalAssets => "total_assets",
            FundamentalField::TotalEquity => "total_equity",
            FundamentalField::OperatingCashFlow => "operating_cash_flow",
            FundamentalField::Dividends => "dividends",
            FundamentalField::NetIncome => "net_income",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FundamentalField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FundamentalField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FundamentalField::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown fundamental field `{s}`"))
    }
}

/// One quarterly fundamental value, stamped with the date it became public.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalRecord {
    pub report_date: NaiveDate,
    pub stock: usize,
    pub field: FundamentalField,
    pub value: f64,
}

/// Point-in-time store of fundamental records.
///
/// A record reported on day `d` is usable only at dates strictly after `d`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fundamentals {
    // [stock][field] -> (report_date, value) sorted by report_date
    series: Vec<[Vec<(NaiveDate, f64)>; 6]>,
}

impl Fundamentals {
    pub fn new(n_stocks: usize, records: impl IntoIterator<Item = FundamentalRecord>) -> Self {
        let mut series: Vec<[Vec<(NaiveDate, f64)>; 6]> = (0..n_stocks).map(|_| Default::default()).collect();
        for r in records {
            series[r.stock][r.field.slot()].push((r.report_date, r.value));
        }
        for per_stock in &mut series {
            for s in per_stock.iter_mut() {
                s.sort_by(|a, b| a.0.cmp(&b.0));
            }
        }
        Self { series }
    }

    pub fn is_empty(&self) -> bool {
        self.series.iter().all(|s| s.iter().all(Vec::is_empty))
    }

    /// All records of one stock and field, oldest first.
    pub fn history(&self, stock: usize, field: FundamentalField) -> &[(NaiveDate, f64)] {
        self.series.get(stock).map(|s| s[field.slot()].as_slice()).unwrap_or(&[])
    }

    /// Latest record reported strictly before `date`.
    pub fn latest_before(&self, stock: usize, field: FundamentalField, date: NaiveDate) -> Option<(NaiveDate, f64)> {
        let h = self.history(stock, field);
        let n = h.partition_point(|(d, _)| *d < date);
        n.checked_sub(1).map(|k| h[k])
    }

    /// Iterates over every record in (stock, field, date) order.
    pub fn records(&self) -> impl Iterator<Item = FundamentalRecord> + '_ {
        self.series.iter().enumerate().flat_map(|(stock, per)| {
            FundamentalField::ALL.into_iter().flat_map(move |field| {
                per[field.slot()].iter().map(move |&(report_date, value)| FundamentalRecord {
                    report_date,
                    stock,
                    field,
                    value,
                })
            })
        })
    }
}

/// Raw components of a panel, validated by [`MarketPanel::from_parts`].
#[derive(Debug, Clone)]
pub struct PanelParts {
    pub dates: Vec<NaiveDate>,
    pub stock_ids: Vec<String>,
    pub close: Grid,
    /// Provided total returns; cells left missing are derived from closes.
    pub total_return: Grid,
    pub market_cap: Grid,
    pub adv: Grid,
    pub sector: Vec<usize>,
    pub sector_names: Vec<String>,
    pub fundamentals: Fundamentals,
}

/// Aligned daily panel of one pool of stocks. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPanel {
    dates: Vec<NaiveDate>,
    stock_ids: Vec<String>,
    close: Grid,
    total_return: Grid,
    market_cap: Grid,
    adv: Grid,
    sector: Vec<usize>,
    sector_names: Vec<String>,
    fundamentals: Fundamentals,
}

impl MarketPanel {
    /// Validates the parts and applies the return rule: the return at `t`
    /// exists iff closes at `t - 1` and `t` both exist. A provided return is
    /// kept (it may include dividends); otherwise it is derived from closes.
    pub fn from_parts(parts: PanelParts) -> Result<Self, DataError> {
        let PanelParts { dates, stock_ids, close, total_return, market_cap, adv, sector, sector_names, fundamentals } =
            parts;
        let (nt, ns) = (dates.len(), stock_ids.len());
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(DataError::Invariant(format!("dates not strictly increasing at {} -> {}", w[0], w[1])));
        }
        for (name, g) in
            [("close", &close), ("total_return", &total_return), ("market_cap", &market_cap), ("adv", &adv)]
        {
            if g.n_dates() != nt || g.n_stocks() != ns {
                return Err(DataError::Invariant(format!(
                    "{name} is {}x{}, expected {nt}x{ns}",
                    g.n_dates(),
                    g.n_stocks()
                )));
            }
        }
        if sector.len() != ns {
            return Err(DataError::Invariant(format!("{} sector labels for {ns} stocks", sector.len())));
        }
        if let Some(&s) = sector.iter().find(|&&s| s >= sector_names.len()) {
            return Err(DataError::Invariant(format!("sector index {s} has no name")));
        }
        for t in 0..nt {
            for i in 0..ns {
                if let Some(c) = market_cap.get(t, i) {
                    if !(c > 0.0) || !c.is_finite() {
                        return Err(DataError::Invariant(format!(
                            "market_cap {c} for {} on {} must be > 0",
                            stock_ids[i], dates[t]
                        )));
                    }
                }
                if let Some(a) = adv.get(t, i) {
                    if !(a >= 0.0) || !a.is_finite() {
                        return Err(DataError::Invariant(format!(
                            "adv {a} for {} on {} must be >= 0",
                            stock_ids[i], dates[t]
                        )));
                    }
                }
                if let Some(c) = close.get(t, i) {
                    if !(c > 0.0) || !c.is_finite() {
                        return Err(DataError::Invariant(format!(
                            "close {c} for {} on {} must be > 0",
                            stock_ids[i], dates[t]
                        )));
                    }
                }
            }
        }
        let mut returns = Grid::missing(nt, ns);
        for t in 1..nt {
            for i in 0..ns {
                if let (Some(prev), Some(cur)) = (close.get(t - 1, i), close.get(t, i)) {
                    let r = total_return.get(t, i).unwrap_or(cur / prev - 1.0);
                    if !r.is_finite() {
                        return Err(DataError::Invariant(format!(
                            "non-finite return for {} on {}",
                            stock_ids[i], dates[t]
                        )));
                    }
                    returns.set(t, i, Some(r));
                }
            }
        }
        Ok(Self { dates, stock_ids, close, total_return: returns, market_cap, adv, sector, sector_names, fundamentals })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_stocks(&self) -> usize {
        self.stock_ids.len()
    }

    pub fn stock_ids(&self) -> &[String] {
        &self.stock_ids
    }

    pub fn close(&self) -> &Grid {
        &self.close
    }

    pub fn returns(&self) -> &Grid {
        &self.total_return
    }

    pub fn market_cap(&self) -> &Grid {
        &self.market_cap
    }

    pub fn adv(&self) -> &Grid {
        &self.adv
    }

    /// Sector index of every stock.
    pub fn sectors(&self) -> &[usize] {
        &self.sector
    }

    pub fn sector_names(&self) -> &[String] {
        &self.sector_names
    }

    pub fn fundamentals(&self) -> &Fundamentals {
        &self.fundamentals
    }

    /// A stock is tradable on a date when its close is known.
    pub fn is_tradable(&self, t: usize, i: usize) -> bool {
        self.close.is_present(t, i)
    }

    /// Index of the first date `>= date`.
    pub fn date_index(&self, date: NaiveDate) -> usize {
        self.dates.partition_point(|d| *d < date)
    }

    /// Copy of the panel restricted to dates `0..end`.
    pub fn truncated(&self, end: usize) -> MarketPanel {
        let end = end.min(self.n_dates());
        let cut = |g: &Grid| {
            let mut out = Grid::missing(end, self.n_stocks());
            for t in 0..end {
                for i in 0..self.n_stocks() {
                    out.set(t, i, g.get(t, i));
                }
            }
            out
        };
        MarketPanel {
            dates: self.dates[..end].to_vec(),
            stock_ids: self.stock_ids.clone(),
            close: cut(&self.close),
            total_return: cut(&self.total_return),
            market_cap: cut(&self.market_cap),
            adv: cut(&self.adv),
            sector: self.sector.clone(),
            sector_names: self.sector_names.clone(),
            fundamentals: self.fundamentals.clone(),
        }
    }

    /// Decomposes the panel back into editable parts.
    pub fn into_parts(self) -> PanelParts {
        PanelParts {
            dates: self.dates,
            stock_ids: self.stock_ids,
            close: self.close,
            total_return: self.total_return,
            market_cap: self.market_cap,
            adv: self.adv,
            sector: self.sector,
            sector_names: self.sector_names,
            fundamentals: self.fundamentals,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn parts() -> PanelParts {
        let mut close = Grid::missing(3, 1);
        close.set(0, 0, Some(100.0));
        close.set(1, 0, Some(110.0));
        close.set(2, 0, Some(99.0));
        let mut cap = Grid::missing(3, 1);
        let mut adv = Grid::missing(3, 1);
        for t in 0..3 {
            cap.set(t, 0, Some(1e9));
            adv.set(t, 0, Some(1e6));
        }
        PanelParts {
            dates: vec![d("2020-01-02"), d("2020-01-03"), d("2020-01-06")],
            stock_ids: vec!["A".into()],
            close,
            total_return: Grid::missing(3, 1),
            market_cap: cap,
            adv,
            sector: vec![0],
            sector_names: vec!["Tech".into()],
            fundamentals: Fundamentals::default(),
        }
    }

    #[test]
    fn returns_are_derived_from_closes() {
        let p = MarketPanel::from_parts(parts()).unwrap();
        assert_eq!(p.returns().get(0, 0), None);
        assert!((p.returns().get(1, 0).unwrap() - 0.1).abs() < 1e-15);
        assert!((p.returns().get(2, 0).unwrap() + 0.1).abs() < 1e-15);
    }

    #[test]
    fn missing_close_flags_both_dependent_returns() {
        let mut parts = parts();
        parts.close.set(1, 0, None);
        parts.total_return.set(1, 0, Some(0.1));
        let p = MarketPanel::from_parts(parts).unwrap();
        assert_eq!(p.returns().get(1, 0), None);
        assert_eq!(p.returns().get(2, 0), None);
        assert!(!p.is_tradable(1, 0));
    }

    #[test]
    fn rejects_non_positive_cap_and_unordered_dates() {
        let mut bad = parts();
        bad.market_cap.set(1, 0, Some(0.0));
        assert!(matches!(MarketPanel::from_parts(bad), Err(DataError::Invariant(_))));
        let mut bad = parts();
        bad.dates.swap(0, 1);
        assert!(matches!(MarketPanel::from_parts(bad), Err(DataError::Invariant(_))));
    }

    #[test]
    fn fundamentals_are_point_in_time() {
        let f = Fundamentals::new(
            1,
            [
                FundamentalRecord {
                    report_date: d("2020-02-14"),
                    stock: 0,
                    field: FundamentalField::NetIncome,
                    value: 1.0,
                },
                FundamentalRecord {
                    report_date: d("2020-05-15"),
                    stock: 0,
                    field: FundamentalField::NetIncome,
                    value: 2.0,
                },
            ],
        );
        assert_eq!(f.latest_before(0, FundamentalField::NetIncome, d("2020-02-14")), None);
        assert_eq!(f.latest_before(0, FundamentalField::NetIncome, d("2020-02-15")).unwrap().1, 1.0);
        assert_eq!(f.latest_before(0, FundamentalField::NetIncome, d("2020-06-01")).unwrap().1, 2.0);
        assert_eq!(f.latest_before(0, FundamentalField::TotalAssets, d("2020-06-01")), None);
        assert_eq!(f.records().count(), 2);
    }
}
