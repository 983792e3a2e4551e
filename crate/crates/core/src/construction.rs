//! Portfolio construction schemes.
//!
//! Every builder maps a ranked predictor to signed dollar weights scaled to
//! unit gross exposure:
//!
//! * `ff`: long the top 30% and short the bottom 30% of the predictor,
//!   cap-weighted within each leg, each leg with gross 0.5.
//! * `neutral`: `x ∝ p`, demeaned over the support.
//! * `beta`: the neutral portfolio with its legs rescaled so that `β·x = 0`.
//! * `betaopt`: `x = p - (wᵀCp / wᵀCw) w`, the closest portfolio to `p` in
//!   the `C` metric that has no exposure to the cap-weighted index `w`.
//! * `markowitz:k=<k>`: `x = C⁻¹p` with the `k`-factor clipped covariance.
//! * `costaware:k=<k>`: Markowitz on a predictor smoothed by a per-stock
//!   exponential moving average and re-ranked; the halflife is recalibrated
//!   periodically on past net-of-cost performance.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::CostParams;
use crate::covariance::{BetaVector, SpectralCovariance};
use crate::signals::{rank_map, Predictor};

/// Retained factors of the covariance used by `betaopt` unless specified.
pub const DEFAULT_BETAOPT_K: usize = 5;
/// Default EMA halflives (trading days) searched by the cost-aware scheme.
pub const DEFAULT_HALFLIFE_GRID: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 21.0, 42.0, 63.0];
/// Default in-sample window and refresh period of the halflife calibration.
pub const CALIBRATION_WINDOW: usize = 252;

/// Fraction of the cross-section in each FF leg, in tenths.
const FF_BUCKET_TENTHS: usize = 3;
/// Relative size below which a portfolio is treated as identically zero.
const DEGENERATE_GROSS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ConstructionError {
    #[error("degenerate cross-section: {0}")]
    Degenerate(String),
    #[error("beta rescaling impossible: long-leg beta {long}, short-leg beta {short}")]
    BetaRescale { long: f64, short: f64 },
    #[error("inputs not aligned with the predictor support: {0}")]
    Misaligned(String),
    #[error("unknown scheme `{0}`; valid: ff, neutral, beta, betaopt[:k=<int>], markowitz:k=<int>, costaware:k=<int>")]
    UnknownScheme(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    Ff,
    Neutral,
    Beta,
    Betaopt { k: usize },
    Markowitz { k: usize },
    CostAware { k: usize },
}

impl Scheme {
    /// Retained factor count of the covariance model the scheme needs.
    pub fn model_k(self) -> Option<usize> {
        match self {
            Scheme::Betaopt { k } | Scheme::Markowitz { k } | Scheme::CostAware { k } => Some(k),
            _ => None,
        }
    }

    pub fn valid_ids() -> &'static str {
        "ff, neutral, beta, betaopt, betaopt:k=<int>, markowitz:k=<int>, costaware:k=<int>"
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Ff => f.write_str("ff"),
            Scheme::Neutral => f.write_str("neutral"),
            Scheme::Beta => f.write_str("beta"),
            Scheme::Betaopt { k } if *k == DEFAULT_BETAOPT_K => f.write_str("betaopt"),
            Scheme::Betaopt { k } => write!(f, "betaopt:k={k}"),
            Scheme::Markowitz { k } => write!(f, "markowitz:k={k}"),
            Scheme::CostAware { k } => write!(f, "costaware:k={k}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = ConstructionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || ConstructionError::UnknownScheme(s.to_string());
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let k = match param {
            None => None,
            Some(p) => {
                let v = p.strip_prefix("k=").ok_or_else(unknown)?;
                let k: usize = v.parse().map_err(|_| unknown())?;
                if k == 0 {
                    return Err(unknown());
                }
                Some(k)
            }
        };
        match (name, k) {
            ("ff", None) => Ok(Scheme::Ff),
            ("neutral", None) => Ok(Scheme::Neutral),
            ("beta", None) => Ok(Scheme::Beta),
            ("betaopt", k) => Ok(Scheme::Betaopt { k: k.unwrap_or(DEFAULT_BETAOPT_K) }),
            ("markowitz", Some(k)) => Ok(Scheme::Markowitz { k }),
            ("costaware", Some(k)) => Ok(Scheme::CostAware { k }),
            _ => Err(unknown()),
        }
    }
}

impl TryFrom<String> for Scheme {
    type Error = ConstructionError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        s.to_string()
    }
}

/// Signed dollar weights on one date.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    pub date: NaiveDate,
    pub date_index: usize,
    pub scheme: Scheme,
    /// Halflife of the predictor smoothing, for the cost-aware scheme.
    pub halflife: Option<f64>,
    /// Ascending stock indices.
    pub stocks: Vec<usize>,
    pub x: Vec<f64>,
}

impl Portfolio {
    pub fn empty(date: NaiveDate, date_index: usize, scheme: Scheme) -> Self {
        Self { date, date_index, scheme, halflife: None, stocks: Vec::new(), x: Vec::new() }
    }

    fn from_predictor(pred: &Predictor, scheme: Scheme, x: Vec<f64>) -> Self {
        Self { date: pred.date, date_index: pred.date_index, scheme, halflife: None, stocks: pred.stocks.clone(), x }
    }

    pub fn gross(&self) -> f64 {
        self.x.iter().map(|v| v.abs()).sum()
    }

    pub fn net(&self) -> f64 {
        self.x.iter().sum()
    }

    pub fn weight(&self, stock: usize) -> f64 {
        self.stocks.binary_search(&stock).map_or(0.0, |k| self.x[k])
    }

    /// `Σ_i x_i b_i`, with `b` looked up per stock; `None` if any is missing.
    pub fn exposure(&self, b: impl Fn(usize) -> Option<f64>) -> Option<f64> {
        self.stocks.iter().zip(&self.x).map(|(&i, x)| b(i).map(|v| v * x)).sum()
    }

    fn scaled_to_unit_gross(mut self) -> Result<Self, ConstructionError> {
        let g = self.gross();
        if !(g > 0.0) || !g.is_finite() {
            return Err(ConstructionError::Degenerate(format!("{} portfolio has gross {g}", self.scheme)));
        }
        self.x.iter_mut().for_each(|v| *v /= g);
        Ok(self)
    }
}

/// Cap weights on a set of stocks, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexWeights {
    pub date: NaiveDate,
    /// Ascending stock indices.
    pub stocks: Vec<usize>,
    pub w: Vec<f64>,
}

impl IndexWeights {
    /// Weights proportional to `caps`; stocks without a positive cap get no
    /// weight.
    pub fn from_caps(date: NaiveDate, stocks: &[usize], caps: &[Option<f64>]) -> Result<Self, ConstructionError> {
        if stocks.len() != caps.len() {
            return Err(ConstructionError::Misaligned(format!("{} stocks, {} caps", stocks.len(), caps.len())));
        }
        let total: f64 = caps.iter().flatten().filter(|c| **c > 0.0).sum();
        if !(total > 0.0) {
            return Err(ConstructionError::Degenerate("no positive market cap".into()));
        }
        let w = caps.iter().map(|c| c.filter(|c| *c > 0.0).map_or(0.0, |c| c / total)).collect();
        Ok(Self { date, stocks: stocks.to_vec(), w })
    }

    pub fn get(&self, stock: usize) -> f64 {
        self.stocks.binary_search(&stock).map_or(0.0, |k| self.w[k])
    }
}

fn check_finite(pred: &Predictor) -> Result<(), ConstructionError> {
    if pred.p.len() != pred.stocks.len() {
        return Err(ConstructionError::Misaligned(format!("{} stocks, {} values", pred.stocks.len(), pred.p.len())));
    }
    if pred.p.iter().any(|v| !v.is_finite()) {
        return Err(ConstructionError::Degenerate("non-finite predictor value".into()));
    }
    Ok(())
}

fn check_model(pred: &Predictor, model: &SpectralCovariance) -> Result<(), ConstructionError> {
    check_finite(pred)?;
    if model.stocks != pred.stocks {
        return Err(ConstructionError::Misaligned(format!(
            "model covers {} stocks, predictor {}",
            model.stocks.len(),
            pred.stocks.len()
        )));
    }
    Ok(())
}

/// Top 30% long and bottom 30% short, cap-weighted, legs of gross 0.5.
/// `caps` is aligned with the predictor support. Stocks tied with the last
/// member of a bucket join the bucket.
pub fn build_ff(pred: &Predictor, caps: &[f64]) -> Result<Portfolio, ConstructionError> {
    check_finite(pred)?;
    let n = pred.len();
    if caps.len() != n {
        return Err(ConstructionError::Misaligned(format!("{n} stocks, {} caps", caps.len())));
    }
    if n < 4 {
        return Err(ConstructionError::Degenerate(format!("ff needs at least 4 stocks, got {n}")));
    }
    if let Some(c) = caps.iter().find(|c| !(**c > 0.0) || !c.is_finite()) {
        return Err(ConstructionError::Degenerate(format!("market cap {c} must be positive")));
    }
    let n_long = (FF_BUCKET_TENTHS * n).div_ceil(10);
    let n_short = FF_BUCKET_TENTHS * n / 10;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pred.p[b].total_cmp(&pred.p[a]).then(a.cmp(&b)));
    let long_cut = pred.p[order[n_long - 1]];
    let short_cut = pred.p[order[n - n_short]];
    if long_cut <= short_cut {
        return Err(ConstructionError::Degenerate("long and short buckets overlap".into()));
    }
    let long_cap: f64 = (0..n).filter(|&k| pred.p[k] >= long_cut).map(|k| caps[k]).sum();
    let short_cap: f64 = (0..n).filter(|&k| pred.p[k] <= short_cut).map(|k| caps[k]).sum();
    let x = (0..n)
        .map(|k| {
            if pred.p[k] >= long_cut {
                0.5 * caps[k] / long_cap
            } else if pred.p[k] <= short_cut {
                -0.5 * caps[k] / short_cap
            } else {
                0.0
            }
        })
        .collect();
    Ok(Portfolio::from_predictor(pred, Scheme::Ff, x))
}

/// `x ∝ p - mean(p)`, unit gross.
pub fn build_neutral(pred: &Predictor) -> Result<Portfolio, ConstructionError> {
    check_finite(pred)?;
    if pred.len() < 2 {
        return Err(ConstructionError::Degenerate(format!("neutral needs at least 2 stocks, got {}", pred.len())));
    }
    let m = pred.p.iter().sum::<f64>() / pred.len() as f64;
    let mut x: Vec<f64> = pred.p.iter().map(|v| v - m).collect();
    let scale = pred.p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if x.iter().all(|v| v.abs() <= DEGENERATE_GROSS * scale) {
        return Err(ConstructionError::Degenerate("predictor is constant".into()));
    }
    // second pass removes the rounding residue of the first
    let r = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= r);
    Portfolio::from_predictor(pred, Scheme::Neutral, x).scaled_to_unit_gross()
}

/// The neutral portfolio with its long and short legs rescaled so that
/// `β·x = 0`, then renormalized to unit gross.
pub fn build_beta(pred: &Predictor, beta: &BetaVector) -> Result<Portfolio, ConstructionError> {
    let neutral = build_neutral(pred)?;
    let b: Vec<f64> = pred
        .stocks
        .iter()
        .map(|&i| beta.get(i).ok_or_else(|| ConstructionError::Misaligned(format!("no beta for stock {i}"))))
        .collect::<Result<_, _>>()?;
    let (mut long, mut short) = (0.0, 0.0);
    for (x, b) in neutral.x.iter().zip(&b) {
        if *x > 0.0 {
            long += x * b;
        } else {
            short += x * b;
        }
    }
    // the short leg is kept and the long leg scaled by -short/long
    let ratio = -short / long;
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(ConstructionError::BetaRescale { long, short });
    }
    let mut x = neutral.x;
    x.iter_mut().filter(|v| **v > 0.0).for_each(|v| *v *= ratio);
    // exact cancellation of the residual long/short beta mismatch
    let long_b: f64 = x.iter().zip(&b).filter(|(v, _)| **v > 0.0).map(|(v, b)| v * b).sum();
    let short_b: f64 = x.iter().zip(&b).filter(|(v, _)| **v < 0.0).map(|(v, b)| v * b).sum();
    let fix = -short_b / long_b;
    x.iter_mut().filter(|v| **v > 0.0).for_each(|v| *v *= fix);
    Portfolio::from_predictor(pred, Scheme::Beta, x).scaled_to_unit_gross()
}

/// `x = p - (wᵀCp / wᵀCw) w`, unit gross. `w` is restricted to the support
/// and renormalized.
pub fn build_betaopt(
    pred: &Predictor,
    model: &SpectralCovariance,
    index: &IndexWeights,
) -> Result<Portfolio, ConstructionError> {
    check_model(pred, model)?;
    let mut w = DVector::from_iterator(pred.len(), pred.stocks.iter().map(|&i| index.get(i)));
    let total = w.sum();
    if !(total > 0.0) {
        return Err(ConstructionError::Degenerate("index has no weight on the predictor support".into()));
    }
    w /= total;
    let p = DVector::from_column_slice(&pred.p);
    let cw = model.apply(&w);
    let wcw = w.dot(&cw);
    if !(wcw > 0.0) {
        return Err(ConstructionError::Degenerate(format!("index variance {wcw:e}")));
    }
    let x = &p - &w * (cw.dot(&p) / wcw);
    if x.amax() <= DEGENERATE_GROSS * p.amax().max(w.amax()) {
        return Err(ConstructionError::Degenerate("predictor is proportional to the index".into()));
    }
    let mut out = Portfolio::from_predictor(pred, Scheme::Betaopt { k: model.k() }, x.iter().copied().collect());
    out.scheme = Scheme::Betaopt { k: model.k() };
    out.scaled_to_unit_gross()
}

/// `x = C⁻¹p`, unit gross.
pub fn build_markowitz(pred: &Predictor, model: &SpectralCovariance) -> Result<Portfolio, ConstructionError> {
    check_model(pred, model)?;
    let x = model.apply_inverse(&DVector::from_column_slice(&pred.p));
    Portfolio::from_predictor(pred, Scheme::Markowitz { k: model.k() }, x.iter().copied().collect())
        .scaled_to_unit_gross()
}

/// Per-stock exponential moving average of a predictor, re-ranked to
/// `[-1, +1]`. A stock entering the support starts from its current value;
/// a stock leaving it forgets its state.
#[derive(Debug, Clone)]
pub struct PredictorSmoother {
    halflife: f64,
    alpha: f64,
    state: Vec<(usize, f64)>,
}

impl PredictorSmoother {
    pub fn new(halflife: f64) -> Result<Self, ConstructionError> {
        if !(halflife > 0.0) || !halflife.is_finite() {
            return Err(ConstructionError::InvalidParameter(format!("halflife {halflife} must be positive")));
        }
        Ok(Self { halflife, alpha: 1.0 - 0.5f64.powf(1.0 / halflife), state: Vec::new() })
    }

    pub fn halflife(&self) -> f64 {
        self.halflife
    }

    /// Smoothing weight of the newest observation, `1 - 2^(-1/h)`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Feeds the predictor of the day and returns the re-ranked smoothed
    /// predictor on the same support.
    pub fn update(&mut self, pred: &Predictor) -> Result<Predictor, ConstructionError> {
        check_finite(pred)?;
        let mut next = Vec::with_capacity(pred.len());
        let mut old = self.state.iter().peekable();
        for (&i, &p) in pred.stocks.iter().zip(&pred.p) {
            while old.next_if(|(j, _)| *j < i).is_some() {}
            let s = match old.next_if(|(j, _)| *j == i) {
                Some((_, prev)) => prev + self.alpha * (p - prev),
                None => p,
            };
            next.push((i, s));
        }
        self.state = next;
        let smoothed: Vec<f64> = self.state.iter().map(|(_, s)| *s).collect();
        let p = rank_map(&smoothed)
            .ok_or_else(|| ConstructionError::Degenerate(format!("{} stocks to rank", smoothed.len())))?;
        Ok(Predictor { date: pred.date, date_index: pred.date_index, stocks: pred.stocks.clone(), p })
    }
}

/// Markowitz on a smoothed predictor.
pub fn build_cost_aware(
    smoothed: &Predictor,
    model: &SpectralCovariance,
    halflife: f64,
) -> Result<Portfolio, ConstructionError> {
    let mut x = build_markowitz(smoothed, model)?;
    x.scheme = Scheme::CostAware { k: model.k() };
    x.halflife = Some(halflife);
    Ok(x)
}

/// Index of the best halflife given each candidate's in-sample daily net
/// P&L. Without costs the smallest halflife wins outright; otherwise the
/// highest net Sharpe ratio, ties to the smaller halflife.
pub fn select_halflife(net_pnl: &[&[f64]], costs: &CostParams) -> usize {
    if costs.rate() == 0.0 {
        return 0;
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (k, pnl) in net_pnl.iter().enumerate() {
        let score = match (crate::stats::mean(pnl), crate::stats::std_dev(pnl)) {
            (Some(m), Some(s)) if s > 0.0 => m / s,
            _ => f64::NEG_INFINITY,
        };
        if score > best.1 {
            best = (k, score);
        }
    }
    best.0
}

/// One candidate of the cost-aware scheme, simulated alongside the traded one.
#[derive(Debug, Clone)]
struct Shadow {
    smoother: PredictorSmoother,
    holdings: Vec<(usize, f64)>,
    net_pnl: Vec<f64>,
    last: Option<Portfolio>,
}

/// Stateful cost-aware Markowitz: runs one shadow portfolio per grid
/// halflife and trades the one with the best net Sharpe over the previous
/// calibration window, re-selected once per window.
#[derive(Debug, Clone)]
pub struct CostAwareMarkowitz {
    grid: Vec<f64>,
    costs: CostParams,
    window: usize,
    shadows: Vec<Shadow>,
    chosen: usize,
    steps: usize,
    next_calibration: usize,
    calibrated: bool,
}

impl CostAwareMarkowitz {
    pub fn new(grid: &[f64], costs: CostParams, window: usize) -> Result<Self, ConstructionError> {
        if grid.is_empty() {
            return Err(ConstructionError::InvalidParameter("empty halflife grid".into()));
        }
        if window < 2 {
            return Err(ConstructionError::InvalidParameter(format!("calibration window {window} < 2")));
        }
        let mut grid = grid.to_vec();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let shadows = grid
            .iter()
            .map(|&h| {
                Ok(Shadow {
                    smoother: PredictorSmoother::new(h)?,
                    holdings: Vec::new(),
                    net_pnl: Vec::new(),
                    last: None,
                })
            })
            .collect::<Result<_, ConstructionError>>()?;
        Ok(Self { grid, costs, window, shadows, chosen: 0, steps: 0, next_calibration: window, calibrated: false })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Halflife currently traded.
    pub fn halflife(&self) -> f64 {
        self.grid[self.chosen]
    }

    /// Whether a calibration has happened yet (before that the smallest
    /// halflife is traded).
    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    /// Marks every shadow portfolio to market with the returns earned since
    /// the previous rebalance. Call once per day before [`Self::rebalance`].
    pub fn accrue(&mut self, returns: impl Fn(usize) -> Option<f64>) {
        for s in &mut self.shadows {
            let pnl: f64 = s.holdings.iter().map(|(i, x)| x * returns(*i).unwrap_or(0.0)).sum();
            s.net_pnl.push(pnl);
        }
    }

    /// Builds today's portfolio. `pred` and `model` may be `None` on days
    /// without a usable cross-section, which flattens every shadow portfolio.
    pub fn rebalance(
        &mut self,
        pred: Option<(&Predictor, &SpectralCovariance)>,
    ) -> Result<Option<Portfolio>, ConstructionError> {
        let rate = self.costs.rate();
        for s in &mut self.shadows {
            let target = match pred {
                Some((p, model)) => {
                    let smoothed = s.smoother.update(p)?;
                    Some(build_cost_aware(&smoothed, model, s.smoother.halflife())?)
                }
                None => {
                    s.smoother = PredictorSmoother::new(s.smoother.halflife())?;
                    None
                }
            };
            let new: Vec<(usize, f64)> =
                target.as_ref().map_or(Vec::new(), |t| t.stocks.iter().copied().zip(t.x.iter().copied()).collect());
            let traded = turnover(&s.holdings, &new);
            if let Some(last) = s.net_pnl.last_mut() {
                *last -= rate * traded;
            } else {
                s.net_pnl.push(-rate * traded);
            }
            s.holdings = new;
            s.last = target;
        }
        self.steps += 1;
        if self.steps >= self.next_calibration {
            let tails: Vec<&[f64]> =
                self.shadows.iter().map(|s| &s.net_pnl[s.net_pnl.len().saturating_sub(self.window)..]).collect();
            self.chosen = select_halflife(&tails, &self.costs);
            self.calibrated = true;
            self.next_calibration += self.window;
            for s in &mut self.shadows {
                let keep = s.net_pnl.len().saturating_sub(self.window);
                s.net_pnl.drain(..keep);
            }
        }
        Ok(self.shadows[self.chosen].last.clone())
    }
}

/// `Σ|x_new - x_old|` over the union of two sorted holdings.
pub fn turnover(old: &[(usize, f64)], new: &[(usize, f64)]) -> f64 {
    let (mut a, mut b) = (0, 0);
    let mut total = 0.0;
    while a < old.len() || b < new.len() {
        match (old.get(a), new.get(b)) {
            (Some(&(i, x)), Some(&(j, y))) if i == j => {
                total += (y - x).abs();
                a += 1;
                b += 1;
            }
            (Some(&(i, x)), Some(&(j, _))) if i < j => {
                total += x.abs();
                a += 1;
            }
            (Some(_), Some(&(_, y))) => {
                total += y.abs();
                b += 1;
            }
            (Some(&(_, x)), None) => {
                total += x.abs();
                a += 1;
            }
            (None, Some(&(_, y))) => {
                total += y.abs();
                b += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{clip_spectrum, BetaSource};
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, 1).unwrap()
    }

    fn pred(p: &[f64]) -> Predictor {
        Predictor { date: day(), date_index: 7, stocks: (0..p.len()).collect(), p: p.to_vec() }
    }

    fn beta(b: &[f64]) -> BetaVector {
        BetaVector {
            stocks: (0..b.len()).collect(),
            beta: b.to_vec(),
            source: BetaSource::Regression,
            window: 252,
            fallbacks: vec![],
        }
    }

    /// Sample correlation of a random factor model and random vols.
    fn random_model(n: usize, k: usize, rng: &mut ChaCha8Rng) -> SpectralCovariance {
        let t = 3 * n;
        let l = DMatrix::from_fn(n, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f = DMatrix::from_fn(t, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let e = DMatrix::from_fn(t, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = f * l.transpose() + e;
        let mut c = x.tr_mul(&x);
        let d: Vec<f64> = (0..n).map(|a| c[(a, a)].sqrt()).collect();
        for a in 0..n {
            for b in 0..n {
                c[(a, b)] /= d[a] * d[b];
            }
            c[(a, a)] = 1.0;
        }
        let c = (&c + c.transpose()) * 0.5;
        let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.005..0.03)).collect();
        clip_spectrum(&c, &sigma, k).unwrap()
    }

    fn random_pred(n: usize, rng: &mut ChaCha8Rng) -> Predictor {
        let raw: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        pred(&rank_map(&raw).unwrap())
    }

    #[test]
    fn scheme_ids_round_trip() {
        for id in ["ff", "neutral", "beta", "betaopt", "betaopt:k=2", "markowitz:k=5", "costaware:k=3"] {
            assert_eq!(id.parse::<Scheme>().unwrap().to_string(), id);
        }
        for bad in ["markowitz", "markowitz:k=0", "ff:k=1", "kelly", "costaware:q=2"] {
            assert!(matches!(bad.parse::<Scheme>(), Err(ConstructionError::UnknownScheme(_))), "{bad}");
        }
        assert_eq!("betaopt".parse::<Scheme>().unwrap().model_k(), Some(DEFAULT_BETAOPT_K));
    }

    #[test]
    fn ff_equal_caps() {
        let p = pred(&rank_map(&(0..10).map(|v| v as f64).collect::<Vec<_>>()).unwrap());
        let x = build_ff(&p, &[1.0; 10]).unwrap();
        for k in 0..3 {
            assert!((x.x[k] + 1.0 / 6.0).abs() < 1e-15);
            assert!((x.x[9 - k] - 1.0 / 6.0).abs() < 1e-15);
        }
        assert!(x.x[3..7].iter().all(|v| *v == 0.0));
        assert!(x.net().abs() < 1e-15);
    }

    #[test]
    fn ff_cap_proportional_legs() {
        let p = pred(&rank_map(&(0..10).map(|v| v as f64).collect::<Vec<_>>()).unwrap());
        let mut caps = [1.0; 10];
        caps[9] = 2.0;
        let x = build_ff(&p, &caps).unwrap();
        assert!((x.x[9] - 2.0 * x.x[8]).abs() < 1e-15);
        let long: f64 = x.x.iter().filter(|v| **v > 0.0).sum();
        let short: f64 = x.x.iter().filter(|v| **v < 0.0).sum();
        assert!((long - 0.5).abs() < 1e-15 && (short + 0.5).abs() < 1e-15);
    }

    #[test]
    fn ff_boundary_ties_join_bucket_and_bad_inputs_fail() {
        // the 3rd and 4th highest are tied: both go long
        let x = build_ff(&pred(&[1.0, 0.8, 0.5, 0.5, 0.0, -0.1, -0.2, -0.5, -0.8, -1.0]), &[1.0; 10]).unwrap();
        assert_eq!(x.x.iter().filter(|v| **v > 0.0).count(), 4);
        assert_eq!(x.x.iter().filter(|v| **v < 0.0).count(), 3);
        assert!(matches!(build_ff(&pred(&[1.0, 0.0, -1.0]), &[1.0; 3]), Err(ConstructionError::Degenerate(_))));
        assert!(matches!(build_ff(&pred(&[0.0; 6]), &[1.0; 6]), Err(ConstructionError::Degenerate(_))));
    }

    #[test]
    fn neutral_examples() {
        let x = build_neutral(&pred(&[1.0, 0.0, -1.0])).unwrap();
        assert_eq!(x.x, vec![0.5, 0.0, -0.5]);
        let odd = build_neutral(&pred(&[1.0, 0.6, 0.2, -0.3, 0.9])).unwrap();
        assert!(odd.net().abs() < 1e-15);
        assert!((odd.gross() - 1.0).abs() < 1e-15);
        assert!(matches!(build_neutral(&pred(&[0.3, 0.3])), Err(ConstructionError::Degenerate(_))));
    }

    #[test]
    fn beta_examples() {
        let p = pred(&[1.0, -0.2, 0.4, -1.0]);
        let uniform = build_beta(&p, &beta(&[1.0; 4])).unwrap();
        let neutral = build_neutral(&p).unwrap();
        for (a, b) in uniform.x.iter().zip(&neutral.x) {
            assert!((a - b).abs() < 1e-15);
        }
        let two = build_beta(&pred(&[1.0, -1.0]), &beta(&[2.0, 1.0])).unwrap();
        assert!((two.x[0] - 1.0 / 3.0).abs() < 1e-15 && (two.x[1] + 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            build_beta(&pred(&[1.0, -1.0]), &beta(&[0.0, 1.0])),
            Err(ConstructionError::BetaRescale { .. })
        ));
    }

    #[test]
    fn beta_constraint_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let p = random_pred(100, &mut rng);
            let b = beta(&(0..100).map(|_| 1.0 + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>());
            let x = build_beta(&p, &b).unwrap();
            let exposure: f64 = x.x.iter().zip(&b.beta).map(|(x, b)| x * b).sum();
            let scale: f64 = x.x.iter().zip(&b.beta).map(|(x, b)| (x * b).abs()).sum();
            assert!(exposure.abs() < 1e-12 * scale, "{exposure}");
            assert!((x.gross() - 1.0).abs() < 1e-12);
        }
    }

    /// Minimizes `(p-x)ᵀC(p-x)` subject to `(Cw)·x = 0` by solving the dense
    /// KKT system.
    fn kkt_oracle(c: &DMatrix<f64>, p: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let n = p.len();
        let a = c * w;
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&(c * 2.0));
        m.view_mut((0, n), (n, 1)).copy_from(&a);
        m.view_mut((n, 0), (1, n)).copy_from(&a.transpose());
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&(c * p * 2.0));
        m.lu().solve(&rhs).unwrap().rows(0, n).into_owned()
    }

    #[test]
    fn betaopt_matches_constrained_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let model = random_model(30, 3, &mut rng);
            let p = random_pred(30, &mut rng);
            let caps: Vec<Option<f64>> = (0..30).map(|_| Some(rng.random_range(1.0..10.0))).collect();
            let w = IndexWeights::from_caps(day(), &p.stocks, &caps).unwrap();
            let x = build_betaopt(&p, &model, &w).unwrap();
            let c = model.to_dense();
            let wv = DVector::from_column_slice(&w.w);
            let pv = DVector::from_column_slice(&p.p);
            let raw = kkt_oracle(&c, &pv, &wv);
            let oracle = &raw / raw.abs().sum();
            let diff = (DVector::from_column_slice(&x.x) - oracle).amax();
            assert!(diff < 1e-8, "{diff}");
            let b = &c * &wv;
            let exposure = b.dot(&DVector::from_column_slice(&x.x));
            let scale: f64 = x.x.iter().zip(b.iter()).map(|(x, b)| (x * b).abs()).sum();
            assert!(exposure.abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn betaopt_special_cases() {
        let n = 4;
        let sigma = [0.01, 0.02, 0.015, 0.03];
        let model = clip_spectrum(&DMatrix::identity(n, n), &sigma, 1).unwrap();
        // wᵀCp = 0 with a diagonal C: orthogonal in the sigma-weighted metric
        let w = IndexWeights { date: day(), stocks: vec![0, 1, 2, 3], w: vec![0.5, 0.5, 0.0, 0.0] };
        let p = pred(&[0.0, 0.0, 1.0, -1.0]);
        let x = build_betaopt(&p, &model, &w).unwrap();
        assert_eq!(x.x, vec![0.0, 0.0, 0.5, -0.5]);
        let same = pred(&[0.25; 4]);
        let flat = IndexWeights { date: day(), stocks: vec![0, 1, 2, 3], w: vec![0.25; 4] };
        assert!(matches!(build_betaopt(&same, &model, &flat), Err(ConstructionError::Degenerate(_))));
    }

    #[test]
    fn betaopt_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = random_model(20, 2, &mut rng);
        let p = random_pred(20, &mut rng);
        let caps: Vec<Option<f64>> = (0..20).map(|_| Some(rng.random_range(1.0..5.0))).collect();
        let w = IndexWeights::from_caps(day(), &p.stocks, &caps).unwrap();
        let c = model.to_dense();
        let pv = DVector::from_column_slice(&p.p);
        let wv = DVector::from_column_slice(&w.w);
        // unnormalized solution, the minimizer itself
        let x = &pv - &wv * ((&c * &wv).dot(&pv) / wv.dot(&(&c * &wv)));
        let objective = |x: &DVector<f64>| (&pv - x).dot(&(&c * (&pv - x)));
        let b = &c * &wv;
        for _ in 0..50 {
            let mut d = DVector::from_fn(20, |_, _| rng.sample::<f64, _>(StandardNormal));
            d -= &b * (b.dot(&d) / b.dot(&b));
            d *= 1e-3 / d.norm();
            assert!(objective(&(&x + &d)) >= objective(&x));
        }
    }

    #[test]
    fn markowitz_special_cases() {
        // identity correlation, equal sigma: the kept mode is a basis vector
        // e_j and any p with p_j = 0 is returned up to scale
        let model = clip_spectrum(&DMatrix::identity(5, 5), &[0.02; 5], 1).unwrap();
        let j = (0..5).find(|&i| model.eigenvectors[(i, 0)].abs() > 0.5).unwrap();
        let raw: Vec<f64> = (0..5).map(|i| if i == j { 0.0 } else { 1.0 - 0.5 * i as f64 }).collect();
        let p = pred(&raw);
        let x = build_markowitz(&p, &model).unwrap();
        let g: f64 = raw.iter().map(|v| v.abs()).sum();
        for i in 0..5 {
            assert!((x.x[i] - raw[i] / g).abs() < 1e-12);
        }
        // one-factor model, p orthogonal to D v1: C⁻¹p = D⁻²p / eps2
        let rho = DMatrix::from_fn(4, 4, |a, b| if a == b { 1.0 } else { 0.4 });
        let sigma = [0.01, 0.02, 0.03, 0.04];
        let m = clip_spectrum(&rho, &sigma, 1).unwrap();
        let v: Vec<f64> = (0..4).map(|i| m.eigenvectors[(i, 0)]).collect();
        // z ⟂ v in the standardized space, p = D z
        let z = [v[1], -v[0], 0.0, 0.0];
        let p = pred(&[z[0] * sigma[0], z[1] * sigma[1], 0.0, 0.0]);
        let got = build_markowitz(&p, &m).unwrap();
        let dense = m.to_dense().try_inverse().unwrap() * DVector::from_column_slice(&p.p);
        let expected: Vec<f64> = (0..4).map(|i| p.p[i] / sigma[i].powi(2)).collect();
        let g: f64 = expected.iter().map(|v| v.abs()).sum();
        let gd = dense.abs().sum();
        for i in 0..4 {
            assert!((got.x[i] - expected[i] / g).abs() < 1e-12);
            assert!((got.x[i] - dense[i] / gd).abs() < 1e-12);
        }
    }

    #[test]
    fn markowitz_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for k in 1..=5 {
            let model = random_model(50, k, &mut rng);
            let p = random_pred(50, &mut rng);
            let x = build_markowitz(&p, &model).unwrap();
            let raw = model.to_dense().try_inverse().unwrap() * DVector::from_column_slice(&p.p);
            let oracle = &raw / raw.abs().sum();
            assert!((DVector::from_column_slice(&x.x) - oracle).amax() < 1e-8);
        }
    }

    #[test]
    fn misaligned_model_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(6, 1, &mut rng);
        let p = pred(&rank_map(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        assert!(matches!(build_markowitz(&p, &model), Err(ConstructionError::Misaligned(_))));
    }

    #[test]
    fn smoother_alpha_and_recursion() {
        let mut s = PredictorSmoother::new(1.0).unwrap();
        assert!((s.alpha() - 0.5).abs() < 1e-15);
        let first = s.update(&pred(&[1.0, 0.0, -1.0])).unwrap();
        assert_eq!(first.p, vec![1.0, 0.0, -1.0]);
        // state after second step: [0, 0.5, 0.5] -> ranks with a tie
        let second = s.update(&pred(&[-1.0, 1.0, 2.0])).unwrap();
        assert_eq!(second.p, vec![-1.0, 0.5, 0.5]);
        assert!(PredictorSmoother::new(0.0).is_err());
    }

    #[test]
    fn smoother_tracks_support_changes() {
        let mut s = PredictorSmoother::new(5.0).unwrap();
        s.update(&pred(&[1.0, -1.0, 0.0])).unwrap();
        let p = Predictor { date: day(), date_index: 8, stocks: vec![1, 2, 3], p: vec![1.0, -1.0, 0.0] };
        let out = s.update(&p).unwrap();
        assert_eq!(out.stocks, vec![1, 2, 3]);
        let a = s.alpha();
        let expected = [-1.0 + a * 2.0, 0.0 - a, 0.0];
        assert_eq!(out.p, rank_map(&expected).unwrap());
    }

    #[test]
    fn halflife_selection_rules() {
        let free = CostParams { commission_bps: 0.0, half_spread_bps: 0.0 };
        let good: Vec<f64> = (0..10).map(|t| 1.0 + (t % 2) as f64).collect();
        let bad: Vec<f64> = (0..10).map(|t| (t % 2) as f64).collect();
        assert_eq!(select_halflife(&[&bad, &good], &free), 0);
        let costly = CostParams::default();
        assert_eq!(select_halflife(&[&bad, &good], &costly), 1);
        assert_eq!(select_halflife(&[&good, &good], &costly), 0);
        assert!(CostAwareMarkowitz::new(&[], costly, 252).is_err());
    }

    #[test]
    fn turnover_merges_supports() {
        assert_eq!(turnover(&[(1, 0.5), (3, -0.5)], &[(2, 0.25), (3, -0.25), (4, 0.5)]), 0.5 + 0.25 + 0.25 + 0.5);
        assert_eq!(turnover(&[], &[(0, 0.5), (1, -0.5)]), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn schemes_are_scale_invariant(seed in 0u64..500, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 25;
            let model = random_model(n, 2, &mut rng);
            let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let p = pred(&raw);
            let q = pred(&raw.iter().map(|v| v * c).collect::<Vec<_>>());
            let caps: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
            let w = IndexWeights::from_caps(day(), &p.stocks, &caps.iter().map(|c| Some(*c)).collect::<Vec<_>>()).unwrap();
            let b = beta(&(0..n).map(|_| rng.random_range(0.5..1.5)).collect::<Vec<_>>());
            let pairs = [
                (build_ff(&p, &caps).unwrap(), build_ff(&q, &caps).unwrap()),
                (build_neutral(&p).unwrap(), build_neutral(&q).unwrap()),
                (build_beta(&p, &b).unwrap(), build_beta(&q, &b).unwrap()),
                (build_betaopt(&p, &model, &w).unwrap(), build_betaopt(&q, &model, &w).unwrap()),
                (build_markowitz(&p, &model).unwrap(), build_markowitz(&q, &model).unwrap()),
            ];
            for (a, b) in pairs {
                for (x, y) in a.x.iter().zip(&b.x) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn neutrality_holds(seed in 0u64..500, n in 4usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let p = pred(&raw);
            let x = build_neutral(&p).unwrap();
            prop_assert!(x.net().abs() < 1e-12);
            prop_assert!((x.gross() - 1.0).abs() < 1e-12);
        }
    }
}
