//! Equity-factor signals and the ranked predictor map.
//!
//! | id          | raw value                                        | lag | ranked            |
//! |-------------|--------------------------------------------------|-----|-------------------|
//! | `accrual`   | yearly change of net operating assets / assets   | 0   | lowest to highest |
//! | `book`      | total equity / market cap                        | 21  | lowest to highest |
//! | `cashflow`  | operating cash flow / market cap                 | 21  | lowest to highest |
//! | `divyield`  | dividends / market cap                           | 21  | lowest to highest |
//! | `earnyield` | net income / market cap                          | 21  | lowest to highest |
//! | `growth`    | operating cash flow / total assets               | 21  | lowest to highest |
//! | `quality`   | net income / total assets                        | 21  | lowest to highest |
//! | `lowbeta`   | first statistical factor beta                    | 0   | highest to lowest |
//! | `lowvol`    | 180-day return volatility                        | 21  | highest to lowest |
//! | `momentum`  | 230-day mean daily return                        | 21  | lowest to highest |
//! | `size`      | 250-day mean market cap                          | 21  | highest to lowest |
//!
//! Lags are in trading days; fundamentals are read point-in-time as of the
//! lagged date.

use std::fmt;
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{estimate_correlation, CorrelationConfig};
use crate::data::{FundamentalField, MarketPanel};

/// One month, in trading days.
pub const REPORTING_LAG: usize = 21;
pub const MOMENTUM_WINDOW: usize = 230;
pub const LOW_VOL_WINDOW: usize = 180;
pub const SIZE_WINDOW: usize = 250;
/// Window of the correlation matrix behind the low-beta factor.
pub const LOW_BETA_WINDOW: usize = 252;
/// Window of the 12-minus-1 momentum variant.
pub const MOMENTUM_12_1_WINDOW: usize = 231;
/// Minimum fraction of present observations in a rolling window.
pub const MIN_COVERAGE: f64 = 0.8;
/// Minimum spacing between the two net-operating-asset reports compared by
/// the accrual factor.
const ACCRUAL_MIN_GAP_DAYS: u64 = 330;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("{factor} needs {required} days of history before {date}, panel has {available}")]
    InsufficientHistory { factor: Factor, date: NaiveDate, required: usize, available: usize },
    #[error("degenerate cross-section: {0} defined value(s), need at least 2")]
    DegenerateCrossSection(usize),
    #[error("unknown factor `{0}`; valid ids: {valid}", valid = Factor::ids().join(", "))]
    UnknownFactor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Factor {
    Accrual,
    Book,
    CashFlow,
    DivYield,
    EarnYield,
    Growth,
    Quality,
    LowBeta,
    LowVol,
    Momentum,
    Size,
}

/// Ranking orientation: which end of the raw values maps to `p = +1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Highest raw value gets `+1`.
    LowestToHighest,
    /// Highest raw value gets `-1`.
    HighestToLowest,
}

impl Factor {
    pub const ALL: [Factor; 11] = [
        Factor::Accrual,
        Factor::Book,
        Factor::CashFlow,
        Factor::DivYield,
        Factor::EarnYield,
        Factor::Growth,
        Factor::Quality,
        Factor::LowBeta,
        Factor::LowVol,
        Factor::Momentum,
        Factor::Size,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Factor::Accrual => "accrual",
            Factor::Book => "book",
            Factor::CashFlow => "cashflow",
            Factor::DivYield => "divyield",
            Factor::EarnYield => "earnyield",
            Factor::Growth => "growth",
            Factor::Quality => "quality",
            Factor::LowBeta => "lowbeta",
            Factor::LowVol => "lowvol",
            Factor::Momentum => "momentum",
            Factor::Size => "size",
        }
    }

    pub fn ids() -> Vec<&'static str> {
        Self::ALL.iter().map(|f| f.id()).collect()
    }

    pub fn direction(self) -> Direction {
        match self {
            Factor::LowBeta | Factor::LowVol | Factor::Size => Direction::HighestToLowest,
            _ => Direction::LowestToHighest,
        }
    }

    pub fn lag_days(self) -> usize {
        match self {
            Factor::Accrual | Factor::LowBeta => 0,
            _ => REPORTING_LAG,
        }
    }

    /// Trailing window of daily data (excluding the lag) the factor reads.
    pub fn window(self) -> usize {
        match self {
            Factor::Momentum => MOMENTUM_WINDOW,
            Factor::LowVol => LOW_VOL_WINDOW,
            Factor::Size => SIZE_WINDOW,
            Factor::LowBeta => LOW_BETA_WINDOW,
            _ => 1,
        }
    }

    /// Smallest date index at which the factor can be computed.
    pub fn first_computable(self) -> usize {
        match self {
            // returns start at index 1
            Factor::Momentum | Factor::LowVol => self.lag_days() + self.window(),
            Factor::LowBeta => self.window(),
            _ => self.lag_days() + self.window() - 1,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Factor {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Factor::ALL.into_iter().find(|f| f.id() == s).ok_or_else(|| SignalError::UnknownFactor(s.to_string()))
    }
}

impl TryFrom<String> for Factor {
    type Error = SignalError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Factor> for String {
    fn from(f: Factor) -> String {
        f.id().to_string()
    }
}

/// Raw factor values on one date.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub date: NaiveDate,
    pub date_index: usize,
    pub direction: Direction,
    pub lag_days: usize,
    /// Stocks with a defined value, ascending.
    pub stocks: Vec<usize>,
    pub values: Vec<f64>,
    /// Candidates without enough data on this date.
    pub excluded: Vec<usize>,
}

/// Ranked predictor uniform in `[-1, +1]` over its support.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub date: NaiveDate,
    pub date_index: usize,
    /// Support, ascending stock indices.
    pub stocks: Vec<usize>,
    pub p: Vec<f64>,
}

impl Predictor {
    pub fn len(&self) -> usize {
        self.stocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stocks.is_empty()
    }

    /// Keeps only the stocks accepted by `keep`.
    pub fn restrict(&self, keep: impl Fn(usize) -> bool) -> Predictor {
        let (stocks, p) = self.stocks.iter().zip(&self.p).filter(|(s, _)| keep(**s)).map(|(s, v)| (*s, *v)).unzip();
        Predictor { date: self.date, date_index: self.date_index, stocks, p }
    }
}

/// Affine rank map `p_i = 2 (rank_i - (N+1)/2) / (N-1)` with average ranks
/// for ties; the highest value maps to `+1`. `None` below two values.
pub fn rank_map(values: &[f64]) -> Option<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mid = (n as f64 + 1.0) / 2.0;
    let span = (n - 1) as f64;
    Some(crate::stats::average_ranks(values).into_iter().map(|r| 2.0 * (r - mid) / span).collect())
}

/// Ranks a raw signal into a predictor, honoring the factor direction.
pub fn rank_to_predictor(signal: &RawSignal) -> Result<Predictor, SignalError> {
    let mut p = rank_map(&signal.values).ok_or(SignalError::DegenerateCrossSection(signal.values.len()))?;
    if signal.direction == Direction::HighestToLowest {
        p.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(Predictor { date: signal.date, date_index: signal.date_index, stocks: signal.stocks.clone(), p })
}

fn split_defined(stocks: &[usize], value: impl Fn(usize) -> Option<f64>) -> (Vec<usize>, Vec<f64>, Vec<usize>) {
    let mut defined = Vec::new();
    let mut values = Vec::new();
    let mut excluded = Vec::new();
    for &i in stocks {
        match value(i) {
            Some(v) if v.is_finite() => {
                defined.push(i);
                values.push(v);
            }
            _ => excluded.push(i),
        }
    }
    (defined, values, excluded)
}

/// Present values of `grid` for stock `i` over `range`, if coverage is met.
fn covered(grid: &crate::data::Grid, i: usize, range: std::ops::Range<usize>) -> Option<Vec<f64>> {
    let need = (MIN_COVERAGE * range.len() as f64).ceil() as usize;
    let v = grid.present(i, range);
    (v.len() >= need.max(1)).then_some(v)
}

/// Computes the raw factor values at date index `t` for the candidate
/// stocks. Stocks lacking data are listed in `excluded`.
pub fn compute_raw_signal(
    factor: Factor,
    panel: &MarketPanel,
    t: usize,
    stocks: &[usize],
) -> Result<RawSignal, SignalError> {
    let date = panel.dates()[t];
    if t < factor.first_computable() {
        return Err(SignalError::InsufficientHistory {
            factor,
            date,
            required: factor.first_computable(),
            available: t,
        });
    }
    let lag = factor.lag_days();
    let e = t - lag;
    let ref_date = panel.dates()[e];
    let fund = panel.fundamentals();
    let cap_at = |i: usize| panel.market_cap().get(e, i);
    let latest = |i: usize, f: FundamentalField| fund.latest_before(i, f, ref_date).map(|(_, v)| v);
    let over_cap = |i: usize, f: FundamentalField| Some(latest(i, f)? / cap_at(i)?);
    let over_assets = |i: usize, f: FundamentalField| {
        let a = latest(i, FundamentalField::TotalAssets)?;
        (a > 0.0).then_some(latest(i, f)? / a)
    };

    let (defined, values, excluded) = match factor {
        Factor::Momentum => split_defined(stocks, |i| {
            covered(panel.returns(), i, e + 1 - MOMENTUM_WINDOW..e + 1).and_then(|v| crate::stats::mean(&v))
        }),
        Factor::LowVol => split_defined(stocks, |i| {
            covered(panel.returns(), i, e + 1 - LOW_VOL_WINDOW..e + 1).and_then(|v| crate::stats::std_dev(&v))
        }),
        Factor::Size => split_defined(stocks, |i| {
            covered(panel.market_cap(), i, e + 1 - SIZE_WINDOW..e + 1).and_then(|v| crate::stats::mean(&v))
        }),
        Factor::Book => split_defined(stocks, |i| over_cap(i, FundamentalField::TotalEquity)),
        Factor::CashFlow => split_defined(stocks, |i| over_cap(i, FundamentalField::OperatingCashFlow)),
        Factor::DivYield => split_defined(stocks, |i| over_cap(i, FundamentalField::Dividends)),
        Factor::EarnYield => split_defined(stocks, |i| over_cap(i, FundamentalField::NetIncome)),
        Factor::Growth => split_defined(stocks, |i| over_assets(i, FundamentalField::OperatingCashFlow)),
        Factor::Quality => split_defined(stocks, |i| over_assets(i, FundamentalField::NetIncome)),
        Factor::Accrual => split_defined(stocks, |i| {
            let noa = fund.history(i, FundamentalField::NetOperatingAssets);
            let k = noa.partition_point(|(d, _)| *d < ref_date).checked_sub(1)?;
            let (d1, v1) = noa[k];
            let cutoff = d1.checked_sub_days(Days::new(ACCRUAL_MIN_GAP_DAYS))?;
            let (_, v0) = noa[..k].iter().rev().find(|(d, _)| *d <= cutoff)?;
            let a = latest(i, FundamentalField::TotalAssets)?;
            (a > 0.0).then_some((v1 - v0) / a)
        }),
        Factor::LowBeta => low_beta_values(panel, e, stocks),
    };
    Ok(RawSignal {
        date,
        date_index: t,
        direction: factor.direction(),
        lag_days: lag,
        stocks: defined,
        values,
        excluded,
    })
}

fn low_beta_values(panel: &MarketPanel, e: usize, stocks: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<usize>) {
    let cfg = CorrelationConfig { window: LOW_BETA_WINDOW, ..Default::default() };
    let Ok(est) = estimate_correlation(panel, stocks, e + 1, &cfg) else {
        return (Vec::new(), Vec::new(), stocks.to_vec());
    };
    let Ok(model) = est.fit(1) else {
        return (Vec::new(), Vec::new(), stocks.to_vec());
    };
    let beta = model.first_factor_beta();
    split_defined(stocks, |i| est.stocks.binary_search(&i).ok().map(|k| beta[k]))
}

/// The "12 months minus the last month" momentum variant: compounded return
/// over the 231 trading days ending one month before `t`.
pub fn momentum_12_1(panel: &MarketPanel, t: usize, stocks: &[usize]) -> Result<RawSignal, SignalError> {
    let date = panel.dates()[t];
    let required = REPORTING_LAG + MOMENTUM_12_1_WINDOW;
    if t < required {
        return Err(SignalError::InsufficientHistory { factor: Factor::Momentum, date, required, available: t });
    }
    let e = t - REPORTING_LAG;
    let (defined, values, excluded) = split_defined(stocks, |i| {
        let v = covered(panel.returns(), i, e + 1 - MOMENTUM_12_1_WINDOW..e + 1)?;
        Some(v.iter().map(|r| 1.0 + r).product::<f64>() - 1.0)
    });
    Ok(RawSignal {
        date,
        date_index: t,
        direction: Direction::LowestToHighest,
        lag_days: REPORTING_LAG,
        stocks: defined,
        values,
        excluded,
    })
}

/// Raw signal followed by the rank map.
pub fn compute_predictor(
    factor: Factor,
    panel: &MarketPanel,
    t: usize,
    stocks: &[usize],
) -> Result<Predictor, SignalError> {
    rank_to_predictor(&compute_raw_signal(factor, panel, t, stocks)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, FundamentalRecord, Fundamentals, Grid, PanelParts, SyntheticSpec};
    use proptest::prelude::*;

    fn raw(values: Vec<f64>, direction: Direction) -> RawSignal {
        RawSignal {
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            date_index: 0,
            direction,
            lag_days: 0,
            stocks: (0..values.len()).collect(),
            values,
            excluded: vec![],
        }
    }

    #[test]
    fn three_point_rank_map() {
        let p = rank_to_predictor(&raw(vec![3.0, 1.0, 2.0], Direction::LowestToHighest)).unwrap();
        assert_eq!(p.p, vec![1.0, -1.0, 0.0]);
        let p = rank_to_predictor(&raw(vec![3.0, 1.0, 2.0], Direction::HighestToLowest)).unwrap();
        assert_eq!(p.p, vec![-1.0, 1.0, 0.0]);
    }

    #[test]
    fn ties_share_the_midpoint() {
        let p = rank_to_predictor(&raw(vec![5.0, 5.0], Direction::LowestToHighest)).unwrap();
        assert_eq!(p.p, vec![0.0, 0.0]);
    }

    #[test]
    fn degenerate_cross_section() {
        assert_eq!(
            rank_to_predictor(&raw(vec![1.0], Direction::LowestToHighest)).unwrap_err(),
            SignalError::DegenerateCrossSection(1)
        );
    }

    #[test]
    fn large_cross_section_is_equispaced_and_symmetric() {
        let values: Vec<f64> = (0..1001).map(|k| ((k * 7919) % 1001) as f64).collect();
        let p = rank_to_predictor(&raw(values, Direction::LowestToHighest)).unwrap();
        let mut sorted = p.p.clone();
        sorted.sort_by(f64::total_cmp);
        for w in sorted.windows(2) {
            assert!((w[1] - w[0] - 2.0 / 1000.0).abs() < 1e-12);
        }
        for k in 0..1001 {
            assert_eq!(sorted[k], -sorted[1000 - k]);
        }
        assert!(p.p.iter().sum::<f64>().abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone_transform_leaves_predictor_unchanged(values in prop::collection::vec(-1e3f64..1e3, 2..60)) {
            let a = rank_to_predictor(&raw(values.clone(), Direction::LowestToHighest)).unwrap();
            let transformed: Vec<f64> = values.iter().map(|v| (v / 100.0).exp() * 3.0 + 1.0).collect();
            let b = rank_to_predictor(&raw(transformed, Direction::LowestToHighest)).unwrap();
            prop_assert_eq!(a.p, b.p);
        }

        #[test]
        fn predictor_is_bounded_and_centered(values in prop::collection::vec(-1e3f64..1e3, 2..60)) {
            let p = rank_to_predictor(&raw(values, Direction::HighestToLowest)).unwrap();
            prop_assert!(p.p.iter().all(|v| v.abs() <= 1.0));
            // average ranks keep the sum at zero even with ties
            prop_assert!(p.p.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    fn synthetic() -> MarketPanel {
        generate_synthetic(&SyntheticSpec { n_stocks: 12, n_days: 400, seed: 5, ..Default::default() }).unwrap()
    }

    #[test]
    fn momentum_matches_brute_force_window_mean() {
        let panel = synthetic();
        let stocks: Vec<usize> = (0..12).collect();
        for t in [251, 300, 399] {
            let s = compute_raw_signal(Factor::Momentum, &panel, t, &stocks).unwrap();
            assert_eq!(s.stocks, stocks);
            for (k, &i) in s.stocks.iter().enumerate() {
                // 230 daily returns ending 21 days before t
                let mut sum = 0.0;
                for day in (t - 21 - 229)..=(t - 21) {
                    sum += panel.returns().get(day, i).unwrap();
                }
                assert!((s.values[k] - sum / 230.0).abs() < 1e-12);
            }
        }
        assert!(matches!(
            compute_raw_signal(Factor::Momentum, &panel, 250, &stocks),
            Err(SignalError::InsufficientHistory { .. })
        ));
    }

    fn flat_panel(n_days: usize, records: Vec<FundamentalRecord>) -> MarketPanel {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let dates = (0..n_days).map(|k| start.checked_add_days(Days::new(k as u64)).unwrap()).collect();
        let mut close = Grid::missing(n_days, 2);
        let mut cap = Grid::missing(n_days, 2);
        let mut adv = Grid::missing(n_days, 2);
        for t in 0..n_days {
            for i in 0..2 {
                close.set(t, i, Some(10.0 + i as f64));
                cap.set(t, i, Some(100.0 * (i + 1) as f64));
                adv.set(t, i, Some(1.0));
            }
        }
        MarketPanel::from_parts(PanelParts {
            dates,
            stock_ids: vec!["A".into(), "B".into()],
            close,
            total_return: Grid::missing(n_days, 2),
            market_cap: cap,
            adv,
            sector: vec![0, 0],
            sector_names: vec!["X".into()],
            fundamentals: Fundamentals::new(2, records),
        })
        .unwrap()
    }

    #[test]
    fn constant_prices_give_zero_momentum() {
        let panel = flat_panel(300, vec![]);
        let s = compute_raw_signal(Factor::Momentum, &panel, 299, &[0, 1]).unwrap();
        assert_eq!(s.values, vec![0.0, 0.0]);
    }

    #[test]
    fn fundamental_ratios() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 5).unwrap();
        let rec = |stock, field, value| FundamentalRecord { report_date: d, stock, field, value };
        let panel = flat_panel(
            60,
            vec![
                rec(0, FundamentalField::NetIncome, 10.0),
                rec(0, FundamentalField::TotalAssets, 100.0),
                rec(0, FundamentalField::TotalEquity, 50.0),
            ],
        );
        let q = compute_raw_signal(Factor::Quality, &panel, 40, &[0, 1]).unwrap();
        assert_eq!(q.stocks, vec![0]);
        assert!((q.values[0] - 0.10).abs() < 1e-15);
        assert_eq!(q.excluded, vec![1]);
        let b = compute_raw_signal(Factor::Book, &panel, 40, &[0, 1]).unwrap();
        assert!((b.values[0] - 0.5).abs() < 1e-15);
        // lagged date index 40 - 21 = 19 -> 2020-01-20, after the report; at
        // t = 25 the lagged date 2020-01-05 is the report day itself
        let early = compute_raw_signal(Factor::Quality, &panel, 25, &[0]).unwrap();
        assert!(early.stocks.is_empty());
    }

    #[test]
    fn accrual_compares_year_apart_reports() {
        let rec =
            |date: &str, field, value| FundamentalRecord { report_date: date.parse().unwrap(), stock: 0, field, value };
        let panel = flat_panel(
            500,
            vec![
                rec("2020-02-15", FundamentalField::NetOperatingAssets, 40.0),
                rec("2020-05-15", FundamentalField::NetOperatingAssets, 45.0),
                rec("2021-02-15", FundamentalField::NetOperatingAssets, 50.0),
                rec("2021-02-15", FundamentalField::TotalAssets, 200.0),
            ],
        );
        let t = panel.date_index("2021-03-01".parse().unwrap());
        let s = compute_raw_signal(Factor::Accrual, &panel, t, &[0]).unwrap();
        assert!((s.values[0] - (50.0 - 40.0) / 200.0).abs() < 1e-15);
    }

    #[test]
    fn lag_discipline_holds_for_price_factors() {
        let panel = synthetic();
        let stocks: Vec<usize> = (0..12).collect();
        let t = 350;
        for factor in [Factor::Momentum, Factor::LowVol, Factor::Size] {
            let before = compute_predictor(factor, &panel, t, &stocks).unwrap();
            let mut parts = panel.clone().into_parts();
            for day in t - factor.lag_days() + 1..panel.n_dates() {
                for i in 0..12 {
                    parts.close.set(day, i, Some(1.0 + (day * 31 + i * 7) as f64 % 13.0));
                    parts.market_cap.set(day, i, Some(1.0 + i as f64));
                    parts.total_return.set(day, i, None);
                }
            }
            let mutated = MarketPanel::from_parts(parts).unwrap();
            assert_eq!(compute_predictor(factor, &mutated, t, &stocks).unwrap(), before, "{factor}");
        }
    }

    #[test]
    fn low_beta_ranks_high_beta_stocks_short() {
        let panel = generate_synthetic(&SyntheticSpec {
            n_stocks: 30,
            n_days: 600,
            market_beta_dispersion: 0.5,
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        let stocks: Vec<usize> = (0..30).collect();
        let s = compute_raw_signal(Factor::LowBeta, &panel, 599, &stocks).unwrap();
        assert_eq!(s.stocks.len(), 30);
        let p = rank_to_predictor(&s).unwrap();
        // the highest first-factor beta is the most shorted stock
        let hi = (0..30).max_by(|&a, &b| s.values[a].total_cmp(&s.values[b])).unwrap();
        assert_eq!(p.p[hi], -1.0);
    }

    #[test]
    fn factor_ids_round_trip() {
        for f in Factor::ALL {
            assert_eq!(f.id().parse::<Factor>().unwrap(), f);
        }
        assert!(matches!("value".parse::<Factor>(), Err(SignalError::UnknownFactor(_))));
    }

    #[test]
    fn twelve_minus_one_momentum_compounds() {
        let panel = synthetic();
        let s = momentum_12_1(&panel, 399, &[3]).unwrap();
        let mut growth = 1.0;
        for day in 399 - 21 - 230..=399 - 21 {
            growth *= 1.0 + panel.returns().get(day, 3).unwrap();
        }
        assert!((s.values[0] - (growth - 1.0)).abs() < 1e-12);
    }
}
