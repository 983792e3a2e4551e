//! Daily-rebalance backtests with linear transaction costs.
//!
//! Conventions: the portfolio decided with data through the close of day
//! `t` is traded at that close and earns the close-to-close return of
//! `t + 1`. P&L is the plain sum of daily dollar P&L on unit-gross
//! weights. Row `t` of a result carries the P&L earned by the holdings of
//! `t - 1` and the cost of the trade done at the close of `t`, so
//! `net_pnl = pre_cost_pnl - cost` holds row by row.
//!
//! Positions in a stock that stops trading are closed at its last
//! available price (no return is earned after it) and the trade is charged.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::construction::{
    build_beta, build_betaopt, build_ff, build_markowitz, build_neutral, turnover, ConstructionError,
    CostAwareMarkowitz, IndexWeights, Portfolio, Scheme, CALIBRATION_WINDOW, DEFAULT_HALFLIFE_GRID,
};
use crate::covariance::{estimate_correlation, BetaEstimator, CorrelationConfig, SpectralCovariance, BETA_WINDOW};
use crate::data::{MarketPanel, Universe};
use crate::signals::{compute_predictor, Factor, Predictor};
use crate::TRADING_DAYS_PER_YEAR;

/// Default annualized volatility target of [`normalize_risk`].
pub const DEFAULT_TARGET_VOL: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum BacktestError {
    #[error("warm-up: trading can start at index {start} but the panel ends at {end}")]
    WarmUp { start: usize, end: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no results to aggregate")]
    Empty,
    #[error("incompatible results: {0}")]
    Mismatch(String),
    #[error("{scheme}: {len} days of P&L, need more than {required}")]
    TooShort { scheme: String, len: usize, required: usize },
    #[error("{0}: P&L has zero variance")]
    ZeroVariance(String),
    #[error("construction: {0}")]
    Construction(#[from] ConstructionError),
    #[error("write failed: {0}")]
    Io(String),
}

/// Linear costs per traded dollar, in basis points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub commission_bps: f64,
    pub half_spread_bps: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self { commission_bps: 1.0, half_spread_bps: 5.0 }
    }
}

impl CostParams {
    pub const ZERO: CostParams = CostParams { commission_bps: 0.0, half_spread_bps: 0.0 };

    /// Total cost per traded dollar.
    pub fn rate(&self) -> f64 {
        (self.commission_bps + self.half_spread_bps) * 1e-4
    }

    pub fn validate(&self) -> Result<(), BacktestError> {
        for (name, v) in [("commission_bps", self.commission_bps), ("half_spread_bps", self.half_spread_bps)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(BacktestError::InvalidConfig(format!("{name} = {v} must be a non-negative number")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub correlation: CorrelationConfig,
    pub beta_window: usize,
    pub costs: CostParams,
    pub halflife_grid: Vec<f64>,
    pub calibration_window: usize,
    /// First date to trade; moved later if the warm-up requires it.
    pub start: Option<NaiveDate>,
    /// Last date to trade, inclusive.
    pub end: Option<NaiveDate>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            correlation: CorrelationConfig::default(),
            beta_window: BETA_WINDOW,
            costs: CostParams::default(),
            halflife_grid: DEFAULT_HALFLIFE_GRID.to_vec(),
            calibration_window: CALIBRATION_WINDOW,
            start: None,
            end: None,
        }
    }
}

/// Daily series of one strategy. All vectors are aligned with `dates`.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub pool: String,
    pub factor: String,
    pub scheme: String,
    pub dates: Vec<NaiveDate>,
    pub pre_cost_pnl: Vec<f64>,
    pub commission: Vec<f64>,
    pub half_spread: Vec<f64>,
    pub cost: Vec<f64>,
    pub net_pnl: Vec<f64>,
    pub turnover: Vec<f64>,
    pub gross: Vec<f64>,
    pub net_exposure: Vec<f64>,
    /// `β·x` with one-year regression betas; `None` when unavailable.
    pub beta_exposure: Vec<Option<f64>>,
    /// Halflife traded by the cost-aware scheme.
    pub halflife: Vec<Option<f64>>,
    /// Holdings after each day's trade; empty for aggregated results.
    pub positions: Vec<Portfolio>,
    /// Factor applied by [`normalize_risk`] (1 otherwise).
    pub risk_scale: f64,
    /// Dates on which the scheme fell back to another construction.
    pub fallbacks: Vec<NaiveDate>,
    /// Start requested by the configuration, when it had to be moved.
    pub requested_start: Option<NaiveDate>,
}

impl BacktestResult {
    fn new(pool: &str, factor: &str, scheme: &str) -> Self {
        Self {
            pool: pool.into(),
            factor: factor.into(),
            scheme: scheme.into(),
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
        }
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Index of `date` in this result.
    pub fn position_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Restriction to the rows with dates in `[from, to]`.
    pub fn between(&self, from: NaiveDate, to: NaiveDate) -> BacktestResult {
        let a = self.dates.partition_point(|d| *d < from);
        let b = self.dates.partition_point(|d| *d <= to);
        let mut out = self.clone();
        let cut = |v: &mut Vec<f64>| *v = v[a..b].to_vec();
        cut(&mut out.pre_cost_pnl);
        cut(&mut out.commission);
        cut(&mut out.half_spread);
        cut(&mut out.cost);
        cut(&mut out.net_pnl);
        cut(&mut out.turnover);
        cut(&mut out.gross);
        cut(&mut out.net_exposure);
        out.dates = self.dates[a..b].to_vec();
        out.beta_exposure = self.beta_exposure[a..b].to_vec();
        out.halflife = self.halflife[a..b].to_vec();
        if !self.positions.is_empty() {
            out.positions = self.positions[a..b].to_vec();
        }
        out
    }

    /// Writes `date,pre_cost_pnl,cost,net_pnl,turnover,gross,net_exposure`
    /// (negative zeros are written as `0`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BacktestError> {
        let io = |e: csv::Error| BacktestError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "pre_cost_pnl", "cost", "net_pnl", "turnover", "gross", "net_exposure"]).map_err(io)?;
        for k in 0..self.len() {
            w.write_record([
                self.dates[k].to_string(),
                (self.pre_cost_pnl[k] + 0.0).to_string(),
                (self.cost[k] + 0.0).to_string(),
                (self.net_pnl[k] + 0.0).to_string(),
                (self.turnover[k] + 0.0).to_string(),
                (self.gross[k] + 0.0).to_string(),
                (self.net_exposure[k] + 0.0).to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| BacktestError::Io(e.to_string()))
    }
}

/// Holdings and accounting of one strategy.
#[derive(Debug, Clone)]
struct Book {
    holdings: Vec<(usize, f64)>,
    result: BacktestResult,
}

impl Book {
    /// P&L of the current holdings over day `t`.
    fn mark(&self, panel: &MarketPanel, t: usize) -> f64 {
        self.holdings.iter().map(|(i, x)| x * panel.returns().get(t, *i).unwrap_or(0.0)).sum()
    }

    /// Trades to `target`, recording the row of day `t` if `record`.
    fn trade(
        &mut self,
        panel: &MarketPanel,
        t: usize,
        pnl: f64,
        target: Option<Portfolio>,
        beta_exposure: Option<f64>,
        costs: &CostParams,
        record: bool,
    ) {
        let date = panel.dates()[t];
        let target = target.unwrap_or_else(|| Portfolio::empty(date, t, Scheme::Neutral));
        let new: Vec<(usize, f64)> =
            target.stocks.iter().copied().zip(target.x.iter().copied()).filter(|(_, x)| *x != 0.0).collect();
        let traded = turnover(&self.holdings, &new);
        self.holdings = new;
        if !record {
            return;
        }
        let r = &mut self.result;
        let commission = costs.commission_bps * 1e-4 * traded;
        let spread = costs.half_spread_bps * 1e-4 * traded;
        let cost = commission + spread;
        r.dates.push(date);
        r.pre_cost_pnl.push(pnl);
        r.commission.push(commission);
        r.half_spread.push(spread);
        r.cost.push(cost);
        r.net_pnl.push(pnl - cost);
        r.turnover.push(traded);
        r.gross.push(target.gross());
        r.net_exposure.push(target.net());
        r.beta_exposure.push(beta_exposure);
        r.halflife.push(target.halflife);
        r.positions.push(target);
    }
}

/// Replays a given sequence of target portfolios, one per trading day
/// starting at date index `start`, through the cost accounting.
pub fn replay(
    panel: &MarketPanel,
    start: usize,
    targets: &[Portfolio],
    costs: &CostParams,
    labels: (&str, &str, &str),
) -> Result<BacktestResult, BacktestError> {
    costs.validate()?;
    if start + targets.len() > panel.n_dates() {
        return Err(BacktestError::InvalidConfig(format!(
            "{} targets from index {start} exceed {} dates",
            targets.len(),
            panel.n_dates()
        )));
    }
    let mut book = Book { holdings: Vec::new(), result: BacktestResult::new(labels.0, labels.1, labels.2) };
    for (k, target) in targets.iter().enumerate() {
        let t = start + k;
        let pnl = book.mark(panel, t);
        let tradable = target.clone().tradable_only(panel, t);
        book.trade(panel, t, pnl, Some(tradable), None, costs, true);
    }
    Ok(book.result)
}

impl Portfolio {
    /// Drops weights on stocks without a price at `t`.
    fn tradable_only(mut self, panel: &MarketPanel, t: usize) -> Portfolio {
        let keep: Vec<bool> = self.stocks.iter().map(|&i| panel.is_tradable(t, i)).collect();
        if keep.iter().all(|k| *k) {
            return self;
        }
        let mut k = 0;
        self.stocks.retain(|_| {
            k += 1;
            keep[k - 1]
        });
        let mut k = 0;
        self.x.retain(|_| {
            k += 1;
            keep[k - 1]
        });
        self
    }
}

/// Per-scheme state in the engine.
enum Runner {
    Stateless(Scheme),
    CostAware(usize, Box<CostAwareMarkowitz>),
}

/// First date index at which every scheme can trade, before any
/// configured start date.
pub fn warm_up_start(universe: &Universe, factor: Factor, schemes: &[Scheme], config: &BacktestConfig) -> usize {
    let mut t0 = universe.first_date().unwrap_or(usize::MAX);
    t0 = t0.max(factor.first_computable()).max(config.beta_window);
    if schemes.iter().any(|s| s.model_k().is_some()) {
        t0 = t0.max(config.correlation.window);
    }
    t0
}

/// Runs one backtest of `factor` on a pool for each scheme, sharing the
/// daily predictor, covariance estimate and betas across schemes.
///
/// When a cost-aware scheme is present, every scheme starts one
/// calibration window later than the warm-up alone requires so that all
/// results cover the same dates.
pub fn run_pool_backtests(
    panel: &MarketPanel,
    universe: &Universe,
    factor: Factor,
    schemes: &[Scheme],
    config: &BacktestConfig,
) -> Result<Vec<BacktestResult>, BacktestError> {
    config.costs.validate()?;
    if schemes.is_empty() {
        return Err(BacktestError::InvalidConfig("no scheme".into()));
    }
    if config.beta_window < 2 {
        return Err(BacktestError::InvalidConfig(format!("beta_window = {}", config.beta_window)));
    }
    let costaware = schemes.iter().any(|s| matches!(s, Scheme::CostAware { .. }));
    let base = warm_up_start(universe, factor, schemes, config);
    let mut t0 = base.saturating_add(if costaware { config.calibration_window } else { 0 });
    let mut requested = None;
    if let Some(d) = config.start {
        let want = panel.dates().partition_point(|x| *x < d);
        if want >= t0 {
            t0 = want;
        } else {
            requested = Some(d);
            tracing::warn!(requested = %d, "backtest start moved later to satisfy the warm-up");
        }
    }
    let end = match config.end {
        Some(d) => panel.dates().partition_point(|x| *x <= d),
        None => panel.n_dates(),
    };
    if t0 >= end {
        return Err(BacktestError::WarmUp { start: t0, end });
    }
    let sim_start = if costaware { t0 - config.calibration_window } else { t0 };

    let mut ks: Vec<usize> = schemes.iter().filter_map(|s| s.model_k()).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut runners = Vec::with_capacity(schemes.len());
    let mut books = Vec::with_capacity(schemes.len());
    for &s in schemes {
        runners.push(match s {
            Scheme::CostAware { k } => Runner::CostAware(
                k,
                Box::new(CostAwareMarkowitz::new(&config.halflife_grid, config.costs, config.calibration_window)?),
            ),
            other => Runner::Stateless(other),
        });
        let mut r = BacktestResult::new(&universe.pool_name, factor.id(), &s.to_string());
        r.requested_start = requested;
        books.push(Book { holdings: Vec::new(), result: r });
    }
    let betas = BetaEstimator::new(panel, universe);

    for t in sim_start..end {
        let record = t >= t0;
        let date = panel.dates()[t];
        let tradable: Vec<usize> = universe
            .members_at(t)
            .map(|m| m.iter().copied().filter(|&i| panel.is_tradable(t, i)).collect())
            .unwrap_or_default();
        let pred = match compute_predictor(factor, panel, t, &tradable) {
            Ok(p) => Some(p),
            Err(e) => {
                tracing::debug!(%date, error = %e, "no predictor");
                None
            }
        };
        let beta = pred.as_ref().and_then(|p| betas.regression(&p.stocks, t, config.beta_window).ok());

        let mut models: BTreeMap<usize, SpectralCovariance> = BTreeMap::new();
        let mut model_pred: Option<Predictor> = None;
        if let (Some(p), false) = (&pred, ks.is_empty()) {
            match estimate_correlation(panel, &p.stocks, t, &config.correlation) {
                Ok(est) => {
                    let spectrum = est.spectrum();
                    for &k in &ks {
                        match est.fit_spectrum(&spectrum, k) {
                            Ok(m) => {
                                models.insert(k, m);
                            }
                            Err(e) => tracing::debug!(%date, k, error = %e, "covariance fit failed"),
                        }
                    }
                    model_pred = Some(p.restrict(|i| est.stocks.binary_search(&i).is_ok()));
                }
                Err(e) => tracing::debug!(%date, error = %e, "correlation estimate failed"),
            }
        }

        for (runner, book) in runners.iter_mut().zip(books.iter_mut()) {
            let pnl = book.mark(panel, t);
            let (target, fell_back) = match runner {
                Runner::Stateless(scheme) => {
                    if !record {
                        continue;
                    }
                    let ctx = DayContext {
                        panel,
                        universe,
                        t,
                        pred: pred.as_ref(),
                        model_pred: model_pred.as_ref(),
                        models: &models,
                        beta: beta.as_ref(),
                    };
                    build_stateless(*scheme, &ctx)
                }
                Runner::CostAware(k, ca) => {
                    ca.accrue(|i| panel.returns().get(t, i));
                    let input = match (model_pred.as_ref(), models.get(k)) {
                        (Some(p), Some(m)) => Some((p, m)),
                        _ => None,
                    };
                    match ca.rebalance(input) {
                        Ok(p) => (p, false),
                        Err(e) => {
                            tracing::debug!(%date, error = %e, "cost-aware construction failed");
                            (None, false)
                        }
                    }
                }
            };
            if fell_back && record {
                book.result.fallbacks.push(date);
            }
            let exposure = match (&target, &beta) {
                (Some(x), Some(b)) => x.exposure(|i| b.get(i)),
                (None, _) => Some(0.0),
                _ => None,
            };
            book.trade(panel, t, pnl, target, exposure, &config.costs, record);
        }
    }
    for b in &books {
        if !b.result.fallbacks.is_empty() {
            tracing::warn!(scheme = %b.result.scheme, days = b.result.fallbacks.len(), "beta rescaling failed; neutral portfolio used");
        }
    }
    Ok(books.into_iter().map(|b| b.result).collect())
}

/// Runs a single scheme.
pub fn run_pool_backtest(
    panel: &MarketPanel,
    universe: &Universe,
    scheme: Scheme,
    factor: Factor,
    config: &BacktestConfig,
) -> Result<BacktestResult, BacktestError> {
    Ok(run_pool_backtests(panel, universe, factor, &[scheme], config)?.remove(0))
}

struct DayContext<'a> {
    panel: &'a MarketPanel,
    universe: &'a Universe,
    t: usize,
    pred: Option<&'a Predictor>,
    model_pred: Option<&'a Predictor>,
    models: &'a BTreeMap<usize, SpectralCovariance>,
    beta: Option<&'a crate::covariance::BetaVector>,
}

/// Target of a stateless scheme and whether it fell back to Neutral.
fn build_stateless(scheme: Scheme, ctx: &DayContext<'_>) -> (Option<Portfolio>, bool) {
    let date = ctx.panel.dates()[ctx.t];
    let Some(pred) = ctx.pred else { return (None, false) };
    let built = match scheme {
        Scheme::Ff => {
            let with_cap = pred.restrict(|i| ctx.panel.market_cap().get(ctx.t, i).is_some());
            let caps: Vec<f64> =
                with_cap.stocks.iter().map(|&i| ctx.panel.market_cap().get(ctx.t, i).unwrap()).collect();
            build_ff(&with_cap, &caps)
        }
        Scheme::Neutral => build_neutral(pred),
        Scheme::Beta => match ctx.beta {
            Some(b) => match build_beta(pred, b) {
                Err(ConstructionError::BetaRescale { long, short }) => {
                    tracing::debug!(%date, long, short, "beta rescaling failed, using neutral");
                    return (build_neutral(pred).ok(), true);
                }
                other => other,
            },
            None => return (build_neutral(pred).ok(), true),
        },
        Scheme::Betaopt { k } | Scheme::Markowitz { k } => {
            let (Some(p), Some(model)) = (ctx.model_pred, ctx.models.get(&k)) else { return (None, false) };
            if let Scheme::Markowitz { .. } = scheme {
                build_markowitz(p, model)
            } else {
                match quarter_start_weights(ctx, p) {
                    Some(w) => build_betaopt(p, model, &w),
                    None => return (None, false),
                }
            }
        }
        Scheme::CostAware { .. } => unreachable!("cost-aware schemes are stateful"),
    };
    match built {
        Ok(p) => (Some(p), false),
        Err(e) => {
            tracing::debug!(%date, %scheme, error = %e, "construction failed");
            (None, false)
        }
    }
}

/// Cap weights from the day before the current quarter starts.
fn quarter_start_weights(ctx: &DayContext<'_>, pred: &Predictor) -> Option<IndexWeights> {
    let q = ctx.universe.quarter_at(ctx.t)?;
    let s = q.start.checked_sub(1)?;
    let caps: Vec<Option<f64>> = pred.stocks.iter().map(|&i| ctx.panel.market_cap().get(s, i)).collect();
    IndexWeights::from_caps(ctx.panel.dates()[ctx.t], &pred.stocks, &caps).ok()
}

/// How pool results are combined into a world-wide result.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Unweighted mean over the pools trading on each date.
    #[default]
    Flat,
    /// Mean weighted by one fixed weight per pool, renormalized over the
    /// pools trading on each date.
    Weighted(Vec<f64>),
}

/// Combines pool results date by date.
pub fn aggregate_worldwide(results: &[BacktestResult], mode: &Aggregation) -> Result<BacktestResult, BacktestError> {
    let first = results.first().ok_or(BacktestError::Empty)?;
    if let Some(r) = results.iter().find(|r| r.scheme != first.scheme || r.factor != first.factor) {
        return Err(BacktestError::Mismatch(format!("{}/{} vs {}/{}", first.factor, first.scheme, r.factor, r.scheme)));
    }
    let weights = match mode {
        Aggregation::Flat => vec![1.0; results.len()],
        Aggregation::Weighted(w) => {
            if w.len() != results.len() || w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(BacktestError::InvalidConfig(format!("{} positive pool weights required", results.len())));
            }
            w.clone()
        }
    };
    if results.len() == 1 {
        return Ok(first.clone());
    }
    let mut dates: Vec<NaiveDate> = results.iter().flat_map(|r| r.dates.iter().copied()).collect();
    dates.sort_unstable();
    dates.dedup();
    let mut out = BacktestResult::new("world", &first.factor, &first.scheme);
    let mut cursor = vec![0usize; results.len()];
    for d in dates {
        let mut present = Vec::new();
        for (p, r) in results.iter().enumerate() {
            if r.dates.get(cursor[p]) == Some(&d) {
                present.push((p, cursor[p]));
                cursor[p] += 1;
            }
        }
        let wsum: f64 = present.iter().map(|(p, _)| weights[*p]).sum();
        let avg = |f: &dyn Fn(&BacktestResult, usize) -> f64| -> f64 {
            present.iter().map(|&(p, k)| weights[p] * f(&results[p], k)).sum::<f64>() / wsum
        };
        out.dates.push(d);
        out.pre_cost_pnl.push(avg(&|r, k| r.pre_cost_pnl[k]));
        out.commission.push(avg(&|r, k| r.commission[k]));
        out.half_spread.push(avg(&|r, k| r.half_spread[k]));
        out.cost.push(avg(&|r, k| r.cost[k]));
        out.turnover.push(avg(&|r, k| r.turnover[k]));
        out.gross.push(avg(&|r, k| r.gross[k]));
        out.net_exposure.push(avg(&|r, k| r.net_exposure[k]));
        let n = out.pre_cost_pnl.len() - 1;
        out.net_pnl.push(out.pre_cost_pnl[n] - out.cost[n]);
        let betas: Option<Vec<f64>> = present.iter().map(|&(p, k)| results[p].beta_exposure[k]).collect();
        out.beta_exposure
            .push(betas.map(|b| b.iter().zip(&present).map(|(v, (p, _))| weights[*p] * v).sum::<f64>() / wsum));
        out.halflife.push(None);
    }
    Ok(out)
}

/// Rescales each result so that the annualized volatility of its pre-cost
/// P&L over the full period equals `target_vol`. P&L, costs, turnover,
/// exposures and positions are all multiplied by the same scalar.
pub fn normalize_risk(results: &[BacktestResult], target_vol: f64) -> Result<Vec<BacktestResult>, BacktestError> {
    if !(target_vol > 0.0) || !target_vol.is_finite() {
        return Err(BacktestError::InvalidConfig(format!("target volatility {target_vol}")));
    }
    results
        .iter()
        .map(|r| {
            if r.len() <= TRADING_DAYS_PER_YEAR {
                return Err(BacktestError::TooShort {
                    scheme: r.scheme.clone(),
                    len: r.len(),
                    required: TRADING_DAYS_PER_YEAR,
                });
            }
            let sd = crate::stats::std_dev(&r.pre_cost_pnl).unwrap_or(0.0);
            let level = r.pre_cost_pnl.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let vol = sd * (TRADING_DAYS_PER_YEAR as f64).sqrt();
            // rounding noise on a constant series is not volatility
            if !(sd > 1e-12 * level) || !vol.is_finite() {
                return Err(BacktestError::ZeroVariance(r.scheme.clone()));
            }
            Ok(scaled(r, target_vol / vol))
        })
        .collect()
}

fn scaled(r: &BacktestResult, s: f64) -> BacktestResult {
    let mut out = r.clone();
    for v in [
        &mut out.pre_cost_pnl,
        &mut out.commission,
        &mut out.half_spread,
        &mut out.cost,
        &mut out.net_pnl,
        &mut out.turnover,
        &mut out.gross,
        &mut out.net_exposure,
    ] {
        v.iter_mut().for_each(|x| *x *= s);
    }
    out.beta_exposure.iter_mut().flatten().for_each(|x| *x *= s);
    for p in &mut out.positions {
        p.x.iter_mut().for_each(|x| *x *= s);
    }
    out.risk_scale *= s;
    out
}
