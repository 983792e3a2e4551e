//! Performance diagnostics: Sharpe ratio and t-stat, rolling risk,
//! exposures, amplitude-reordered skewness and market-kink conditioning.

use std::collections::BTreeMap;
use std::ops::Range;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::BacktestResult;
use crate::construction::Portfolio;
use crate::stats::{self, ExactSum};
use crate::TRADING_DAYS_PER_YEAR;

/// One year of trading days.
pub const ROLLING_WINDOW: usize = TRADING_DAYS_PER_YEAR;
/// Kink thresholds (in weekly volatilities) reported by default.
pub const DEFAULT_KINK_THRESHOLDS: [f64; 3] = [1.0, 2.0, 3.0];

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("degenerate series: {0}")]
    Degenerate(String),
    #[error("insufficient data: {available} observations, need {required}")]
    InsufficientData { required: usize, available: usize },
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpeStats {
    /// `mean / std * sqrt(252)` of daily P&L.
    pub sharpe: f64,
    /// `sharpe * sqrt(years)`.
    pub tstat: f64,
    pub years: f64,
    pub annual_mean: f64,
    pub annual_vol: f64,
}

/// Annualized Sharpe ratio and t-stat of a daily P&L series.
pub fn sharpe_and_tstat(pnl: &[f64]) -> Result<SharpeStats, AnalyticsError> {
    if pnl.len() < 2 {
        return Err(AnalyticsError::InsufficientData { required: 2, available: pnl.len() });
    }
    let m = stats::mean(pnl).unwrap();
    let s = stats::std_dev(pnl).unwrap();
    // relative floor: a constant series has a rounding-level std
    if !(s > 1e-14 * m.abs()) || s == 0.0 {
        return Err(AnalyticsError::Degenerate(format!("P&L has zero variance (mean {m:e})")));
    }
    let ann = (TRADING_DAYS_PER_YEAR as f64).sqrt();
    let sharpe = m / s * ann;
    let years = pnl.len() as f64 / TRADING_DAYS_PER_YEAR as f64;
    Ok(SharpeStats {
        sharpe,
        tstat: sharpe * years.sqrt(),
        years,
        annual_mean: m * TRADING_DAYS_PER_YEAR as f64,
        annual_vol: s * ann,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingStats {
    pub window: usize,
    /// Annualized trailing volatility; `None` before a full window.
    pub vol: Vec<Option<f64>>,
    /// `vol` divided by its time average.
    pub normalized_vol: Vec<Option<f64>>,
    /// Trailing Pearson correlation with the index; `None` before a full
    /// window or when either side is flat.
    pub corr: Vec<Option<f64>>,
}

/// Trailing-window volatility of `pnl` and its correlation with
/// `index_returns` (missing index days are skipped pairwise). The value at
/// `t` uses observations `t + 1 - window ..= t` only.
pub fn rolling_stats(
    pnl: &[f64],
    index_returns: &[Option<f64>],
    window: usize,
) -> Result<RollingStats, AnalyticsError> {
    if pnl.len() != index_returns.len() {
        return Err(AnalyticsError::Misaligned(format!("{} P&L vs {} index values", pnl.len(), index_returns.len())));
    }
    if window < 2 {
        return Err(AnalyticsError::InvalidParameter(format!("window {window} < 2")));
    }
    if pnl.len() < window {
        return Err(AnalyticsError::InsufficientData { required: window, available: pnl.len() });
    }
    let ann = (TRADING_DAYS_PER_YEAR as f64).sqrt();
    let n = pnl.len();
    let mut vol = vec![None; n];
    let mut corr = vec![None; n];
    for t in window - 1..n {
        let w = t + 1 - window..t + 1;
        vol[t] = stats::std_dev(&pnl[w.clone()]).map(|s| s * ann);
        let (xs, ys): (Vec<f64>, Vec<f64>) = w.filter_map(|s| Some((pnl[s], index_returns[s]?))).unzip();
        corr[t] = stats::pearson(&xs, &ys);
    }
    let defined: Vec<f64> = vol.iter().flatten().copied().collect();
    let avg = stats::mean(&defined).unwrap_or(0.0);
    let normalized_vol = vol.iter().map(|v| v.filter(|_| avg > 0.0).map(|v| v / avg)).collect();
    Ok(RollingStats { window, vol, normalized_vol, corr })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureReport {
    pub dates: Vec<NaiveDate>,
    /// `Σx / Σ|x|`; `None` on dates with zero gross.
    pub net_over_gross: Vec<Option<f64>>,
    /// `β·x` per date, when betas were available.
    pub beta: Vec<Option<f64>>,
    pub sector_names: Vec<String>,
    /// `|Σ_{i∈s} x_i| / Σ|x|` per date and sector.
    pub sector_series: Vec<Vec<Option<f64>>>,
    /// Time average of `sector_series` per sector over dates with nonzero
    /// gross.
    pub sector_average: Vec<f64>,
    /// Dates on which the exposures are undefined (zero gross).
    pub undefined: Vec<NaiveDate>,
}

impl ExposureReport {
    /// Mean of the per-sector averages.
    pub fn mean_sector_exposure(&self) -> f64 {
        stats::mean(&self.sector_average).unwrap_or(0.0)
    }
}

/// Net-over-gross, sector and beta exposures of a position history.
/// `sectors[i]` is the sector index of stock `i`.
pub fn exposures(
    positions: &[Portfolio],
    sectors: &[usize],
    sector_names: &[String],
    beta: Option<&[Option<f64>]>,
) -> Result<ExposureReport, AnalyticsError> {
    if let Some(b) = beta {
        if b.len() != positions.len() {
            return Err(AnalyticsError::Misaligned(format!(
                "{} positions vs {} beta values",
                positions.len(),
                b.len()
            )));
        }
    }
    let ns = sector_names.len();
    let mut report = ExposureReport {
        dates: Vec::with_capacity(positions.len()),
        net_over_gross: Vec::with_capacity(positions.len()),
        beta: beta.map_or_else(|| vec![None; positions.len()], <[_]>::to_vec),
        sector_names: sector_names.to_vec(),
        sector_series: Vec::with_capacity(positions.len()),
        sector_average: vec![0.0; ns],
        undefined: Vec::new(),
    };
    let mut counted = 0usize;
    for p in positions {
        report.dates.push(p.date);
        let gross = p.gross();
        if !(gross > 0.0) {
            report.net_over_gross.push(None);
            report.sector_series.push(vec![None; ns]);
            report.undefined.push(p.date);
            continue;
        }
        let mut net = vec![0.0; ns];
        for (&i, &x) in p.stocks.iter().zip(&p.x) {
            let s = *sectors
                .get(i)
                .filter(|s| **s < ns)
                .ok_or_else(|| AnalyticsError::Misaligned(format!("stock {i} has no valid sector")))?;
            net[s] += x;
        }
        let row: Vec<Option<f64>> = net.iter().map(|v| Some((v.abs() / gross).min(1.0))).collect();
        for (acc, v) in report.sector_average.iter_mut().zip(&row) {
            *acc += v.unwrap();
        }
        counted += 1;
        report.net_over_gross.push(Some(p.net() / gross));
        report.sector_series.push(row);
    }
    if counted > 0 {
        report.sector_average.iter_mut().for_each(|v| *v /= counted as f64);
    }
    Ok(report)
}

/// Values grouped by ISO week.
#[derive(Debug, Clone, PartialEq)]
pub struct WeeklySeries {
    /// `(iso year, iso week)` keys, ascending.
    pub weeks: Vec<(i32, u32)>,
    /// Last date of the input falling in each week.
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl WeeklySeries {
    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }

    /// This series re-indexed on `other`'s weeks; weeks absent here are
    /// `fill`.
    pub fn aligned_to(&self, other: &WeeklySeries, fill: f64) -> Vec<f64> {
        let map: BTreeMap<(i32, u32), f64> = self.weeks.iter().copied().zip(self.values.iter().copied()).collect();
        other.weeks.iter().map(|w| map.get(w).copied().unwrap_or(fill)).collect()
    }
}

fn iso_key(d: NaiveDate) -> (i32, u32) {
    let w = d.iso_week();
    (w.year(), w.week())
}

fn group_weeks(dates: &[NaiveDate], values: &[Option<f64>], combine: fn(&mut f64, f64)) -> WeeklySeries {
    let mut out = WeeklySeries { weeks: Vec::new(), dates: Vec::new(), values: Vec::new() };
    for (d, v) in dates.iter().zip(values) {
        let key = iso_key(*d);
        if out.weeks.last() != Some(&key) {
            let Some(v) = v else { continue };
            out.weeks.push(key);
            out.dates.push(*d);
            out.values.push(*v);
        } else if let Some(v) = v {
            let k = out.values.len() - 1;
            combine(&mut out.values[k], *v);
            out.dates[k] = *d;
        }
    }
    out
}

/// Sum of daily values within each ISO week.
pub fn weekly_sum(dates: &[NaiveDate], daily: &[f64]) -> WeeklySeries {
    let v: Vec<Option<f64>> = daily.iter().map(|x| Some(*x)).collect();
    group_weeks(dates, &v, |acc, x| *acc += x)
}

/// Last present value within each ISO week (weekly closes).
pub fn weekly_last(dates: &[NaiveDate], daily: &[Option<f64>]) -> WeeklySeries {
    group_weeks(dates, daily, |acc, x| *acc = x)
}

/// Levels obtained by compounding daily returns from 1 (missing days
/// carry the level forward).
pub fn index_levels(returns: &[Option<f64>]) -> Vec<f64> {
    let mut level = 1.0;
    returns
        .iter()
        .map(|r| {
            if let Some(r) = r {
                level *= 1.0 + r;
            }
            level
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkewPoint {
    /// 1-based position after sorting by amplitude.
    pub rank: usize,
    /// Position in the original weekly series.
    pub week: usize,
    pub pnl: f64,
    pub cum_pnl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkewCurve {
    pub points: Vec<SkewPoint>,
    /// Sum of the weekly P&L, equal to the last `cum_pnl`.
    pub total: f64,
    /// Bias-corrected skewness of the weekly series; `None` below three
    /// points or for a flat series.
    pub skewness: Option<f64>,
}

/// Weekly P&L sorted by absolute value (ties in original order) with its
/// cumulative sum. Partial sums are correctly rounded, so the last one
/// equals the total regardless of the order of summation.
pub fn skew_curve(pnl_weekly: &[f64]) -> SkewCurve {
    let mut order: Vec<usize> = (0..pnl_weekly.len()).collect();
    order.sort_by(|&a, &b| pnl_weekly[a].abs().total_cmp(&pnl_weekly[b].abs()).then(a.cmp(&b)));
    let mut acc = ExactSum::new();
    let points = order
        .iter()
        .enumerate()
        .map(|(r, &w)| {
            acc.add(pnl_weekly[w]);
            SkewPoint { rank: r + 1, week: w, pnl: pnl_weekly[w], cum_pnl: acc.value() }
        })
        .collect();
    SkewCurve { points, total: stats::exact_sum(pnl_weekly), skewness: stats::skewness(pnl_weekly) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KinkKind {
    Minimum,
    Maximum,
}

impl KinkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KinkKind::Minimum => "minimum",
            KinkKind::Maximum => "maximum",
        }
    }
}

/// Week counts of the kink detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinkConfig {
    /// Centered window in which the extremum must be strict (odd).
    pub extremum_window: usize,
    /// Weeks before the extremum searched for the reference level.
    pub reference_lookback: usize,
    /// Weekly log returns in the volatility estimate.
    pub vol_window: usize,
    /// Weeks after the extremum over which performance is measured.
    pub horizon: usize,
}

impl Default for KinkConfig {
    fn default() -> Self {
        Self { extremum_window: 9, reference_lookback: 26, vol_window: 52, horizon: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KinkEvent {
    pub kind: KinkKind,
    /// Index of the extremum week.
    pub week: usize,
    pub date: NaiveDate,
    /// Draw-down (or draw-up) from the reference level in weekly
    /// volatilities.
    pub depth_sigma: f64,
    /// Threshold the event was retained for.
    pub threshold: f64,
    /// Weeks `week + 1 ..= week + horizon`.
    pub eval_window: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinkReport {
    pub events: Vec<KinkEvent>,
    /// Deep-enough extrema dropped because their volatility window was not
    /// yet available.
    pub suppressed: Vec<NaiveDate>,
}

/// Local extrema of a weekly index deeper than `n` weekly volatilities.
///
/// Working on log closes `y`, week `t` is a minimum if `y_t` is strictly
/// below every other value of the centered window. Its depth is
/// `(y_m - y_t) / sigma`, where `y_m` is the highest level of the
/// `reference_lookback` weeks before `t` (latest on ties) and `sigma` the
/// standard deviation of the `vol_window` weekly log returns ending at
/// week `m`. Maxima mirror this with the lowest prior level. Events need
/// `horizon` weeks of data after them.
pub fn detect_kinks(
    dates: &[NaiveDate],
    closes: &[f64],
    n: f64,
    config: &KinkConfig,
) -> Result<KinkReport, AnalyticsError> {
    if dates.len() != closes.len() {
        return Err(AnalyticsError::Misaligned(format!("{} dates vs {} closes", dates.len(), closes.len())));
    }
    if config.extremum_window < 3 || config.extremum_window % 2 == 0 {
        return Err(AnalyticsError::InvalidParameter(format!(
            "extremum window {} must be odd and >= 3",
            config.extremum_window
        )));
    }
    if config.vol_window < 2 || config.reference_lookback == 0 || config.horizon == 0 {
        return Err(AnalyticsError::InvalidParameter("window lengths must be positive".into()));
    }
    if let Some(c) = closes.iter().find(|c| !(**c > 0.0) || !c.is_finite()) {
        return Err(AnalyticsError::InvalidParameter(format!("close {c} must be positive")));
    }
    let required = config.vol_window + config.extremum_window;
    if closes.len() < required {
        return Err(AnalyticsError::InsufficientData { required, available: closes.len() });
    }
    let y: Vec<f64> = closes.iter().map(|c| c.ln()).collect();
    let half = config.extremum_window / 2;
    let mut report = KinkReport { events: Vec::new(), suppressed: Vec::new() };
    let last = y.len() - 1;
    for t in 1..y.len() {
        if t < half || t + half.max(config.horizon) > last {
            continue;
        }
        let neighbours = (t - half..=t + half).filter(|&s| s != t);
        let kind = if neighbours.clone().all(|s| y[t] < y[s]) {
            KinkKind::Minimum
        } else if neighbours.clone().all(|s| y[t] > y[s]) {
            KinkKind::Maximum
        } else {
            continue;
        };
        let from = t.saturating_sub(config.reference_lookback);
        let mut m = from;
        for s in from..t {
            let better = match kind {
                KinkKind::Minimum => y[s] >= y[m],
                KinkKind::Maximum => y[s] <= y[m],
            };
            if better {
                m = s;
            }
        }
        let move_ = match kind {
            KinkKind::Minimum => y[m] - y[t],
            KinkKind::Maximum => y[t] - y[m],
        };
        if m < config.vol_window {
            if move_ > 0.0 {
                report.suppressed.push(dates[t]);
            }
            continue;
        }
        let rets: Vec<f64> = (m + 1 - config.vol_window..=m).map(|s| y[s] - y[s - 1]).collect();
        let sigma = stats::std_dev(&rets).unwrap_or(0.0);
        if !(sigma > 0.0) {
            continue;
        }
        let depth = move_ / sigma;
        if depth >= n {
            report.events.push(KinkEvent {
                kind,
                week: t,
                date: dates[t],
                depth_sigma: depth,
                threshold: n,
                eval_window: t + 1..t + 1 + config.horizon,
            });
        }
    }
    if !report.suppressed.is_empty() {
        tracing::info!(count = report.suppressed.len(), "kink candidates suppressed during the volatility warm-up");
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalRow {
    pub kind: KinkKind,
    pub n: f64,
    pub count: usize,
    /// Mean of the P&L summed over each event's window; `None` without
    /// events.
    pub mean: Option<f64>,
    /// Standard error of `mean`; `None` below two events.
    pub stderr: Option<f64>,
}

/// Average strategy P&L over the windows following the events, for each
/// kind and each threshold `n` (an event counts for `n` when its depth is
/// at least `n`). `pnl_weekly` is aligned with the index weeks the events
/// refer to.
pub fn conditional_performance(
    pnl_weekly: &[f64],
    events: &[KinkEvent],
    thresholds: &[f64],
) -> Result<Vec<ConditionalRow>, AnalyticsError> {
    let mut rows = Vec::new();
    for kind in [KinkKind::Minimum, KinkKind::Maximum] {
        for &n in thresholds {
            let mut sums = Vec::new();
            for e in events.iter().filter(|e| e.kind == kind && e.depth_sigma >= n) {
                let w = pnl_weekly.get(e.eval_window.clone()).ok_or_else(|| {
                    AnalyticsError::Misaligned(format!(
                        "event window {:?} beyond {} weeks of P&L",
                        e.eval_window,
                        pnl_weekly.len()
                    ))
                })?;
                sums.push(w.iter().sum::<f64>());
            }
            let count = sums.len();
            rows.push(ConditionalRow {
                kind,
                n,
                count,
                mean: stats::mean(&sums),
                stderr: stats::std_dev(&sums).map(|s| s / (count as f64).sqrt()),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReturn {
    pub sharpe: Option<f64>,
    pub tstat: Option<f64>,
    pub annual_return: Option<f64>,
    pub annual_vol: Option<f64>,
}

impl RiskReturn {
    fn of(pnl: &[f64]) -> Self {
        match sharpe_and_tstat(pnl) {
            Ok(s) => Self {
                sharpe: Some(s.sharpe),
                tstat: Some(s.tstat),
                annual_return: Some(s.annual_mean),
                annual_vol: Some(s.annual_vol),
            },
            Err(_) => Self {
                sharpe: None,
                tstat: None,
                annual_return: stats::mean(pnl).map(|m| m * TRADING_DAYS_PER_YEAR as f64),
                annual_vol: stats::std_dev(pnl).map(|s| s * (TRADING_DAYS_PER_YEAR as f64).sqrt()),
            },
        }
    }
}

/// Headline statistics of one backtest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerformanceSummary {
    pub pool: String,
    pub factor: String,
    pub scheme: String,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub days: usize,
    pub pre_cost: RiskReturn,
    pub net: RiskReturn,
    /// Skewness of weekly net P&L.
    pub weekly_skewness: Option<f64>,
    pub mean_turnover: Option<f64>,
    pub mean_cost: Option<f64>,
    pub mean_gross: Option<f64>,
    pub mean_net_over_gross: Option<f64>,
    pub risk_scale: f64,
}

impl PerformanceSummary {
    pub fn of(r: &BacktestResult) -> Self {
        let weekly = weekly_sum(&r.dates, &r.net_pnl);
        let nog: Vec<f64> =
            r.net_exposure.iter().zip(&r.gross).filter(|(_, g)| **g > 0.0).map(|(n, g)| n / g).collect();
        Self {
            pool: r.pool.clone(),
            factor: r.factor.clone(),
            scheme: r.scheme.clone(),
            start: r.dates.first().copied(),
            end: r.dates.last().copied(),
            days: r.len(),
            pre_cost: RiskReturn::of(&r.pre_cost_pnl),
            net: RiskReturn::of(&r.net_pnl),
            weekly_skewness: stats::skewness(&weekly.values),
            mean_turnover: stats::mean(&r.turnover),
            mean_cost: stats::mean(&r.cost),
            mean_gross: stats::mean(&r.gross),
            mean_net_over_gross: stats::mean(&nog),
            risk_scale: r.risk_scale,
        }
    }
}
