//! Synthetic panels driven by a one-market, multi-sector factor model.
//!
//! Daily returns follow `r_it = beta_i f_t + s_{g(i),t} + eta_it`, with an
//! optional alpha term `embedded_alpha * idio_vol_daily * p_{i,t-1}` where
//! `p` is the (lagged) momentum predictor of the generated returns
//! themselves. This gives the momentum factor genuine predictive power.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::panel::{FundamentalField, FundamentalRecord, Fundamentals, Grid, MarketPanel, PanelParts};
use super::DataError;
use crate::signals::{rank_map, MOMENTUM_WINDOW, REPORTING_LAG};

const DAYS_PER_YEAR: f64 = crate::TRADING_DAYS_PER_YEAR as f64;
const FUNDAMENTALS_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
/// Days between a fiscal quarter end and its report date.
const REPORT_DELAY_DAYS: u64 = 45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_stocks: usize,
    pub n_days: usize,
    pub n_sectors: usize,
    /// Annualized volatility of the market factor.
    pub market_vol: f64,
    /// Annualized volatility of each sector factor.
    pub sector_vol: f64,
    /// Annualized idiosyncratic volatility.
    pub idio_vol: f64,
    /// Standard deviation of the stock betas around 1.
    pub market_beta_dispersion: f64,
    /// Coupling of next-day returns to the lagged momentum predictor, in
    /// units of daily idiosyncratic volatility.
    pub embedded_alpha: Option<f64>,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_stocks: 100,
            n_days: 1500,
            n_sectors: 4,
            market_vol: 0.16,
            sector_vol: 0.10,
            idio_vol: 0.25,
            market_beta_dispersion: 0.3,
            embedded_alpha: None,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidSpec(msg));
        if self.n_stocks < 1 {
            return bad("n_stocks must be >= 1".into());
        }
        if self.n_days < 2 {
            return bad("n_days must be >= 2".into());
        }
        if self.n_sectors < 1 {
            return bad("n_sectors must be >= 1".into());
        }
        for (name, v) in [("market_vol", self.market_vol), ("sector_vol", self.sector_vol), ("idio_vol", self.idio_vol)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a positive number, got {v}"));
            }
        }
        if !(self.market_beta_dispersion >= 0.0 && self.market_beta_dispersion.is_finite()) {
            return bad(format!("market_beta_dispersion must be >= 0, got {}", self.market_beta_dispersion));
        }
        if let Some(a) = self.embedded_alpha {
            if !a.is_finite() {
                return bad(format!("embedded_alpha must be finite, got {a}"));
            }
        }
        Ok(())
    }
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date overflow");
    }
    out
}

fn quarter_end(d: NaiveDate) -> NaiveDate {
    let q_end_month = ((d.month0() / 3) + 1) * 3;
    let next = if q_end_month == 12 {
        NaiveDate::from_ymd_opt(d.year() + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(d.year(), q_end_month + 1, 1)
    };
    next.unwrap().pred_opt().unwrap()
}

/// Generates a panel from `spec`. The same spec (including seed) gives a
/// bit-identical panel.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MarketPanel, DataError> {
    spec.validate()?;
    let (n, nt, ng) = (spec.n_stocks, spec.n_days, spec.n_sectors);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };

    let scale = DAYS_PER_YEAR.sqrt();
    let (sm, ss, si) = (spec.market_vol / scale, spec.sector_vol / scale, spec.idio_vol / scale);

    let beta: Vec<f64> = (0..n).map(|_| 1.0 + spec.market_beta_dispersion * normal()).collect();
    let cap: Vec<f64> = (0..n).map(|_| (5e9f64.ln() + normal()).exp()).collect();
    let adv: Vec<f64> = cap.iter().map(|c| c * (0.004f64.ln() + 0.5 * normal()).exp()).collect();
    let price0: Vec<f64> = (0..n).map(|_| (50f64.ln() + 0.5 * normal()).exp()).collect();
    let sector: Vec<usize> = (0..n).map(|i| i % ng).collect();

    let mut returns = vec![0.0; nt * n];
    // cumulative return sums per stock, for the momentum predictor feeding alpha
    let mut cum = vec![0.0; nt * n];
    let mut lagged_signal: Option<Vec<f64>> = None;
    let mut factor_row = vec![0.0; ng];
    for t in 1..nt {
        let f = sm * normal();
        for s in factor_row.iter_mut() {
            *s = ss * normal();
        }
        for i in 0..n {
            let mut r = beta[i] * f + factor_row[sector[i]] + si * normal();
            if let (Some(a), Some(p)) = (spec.embedded_alpha, &lagged_signal) {
                r += a * si * p[i];
            }
            returns[t * n + i] = r;
            cum[t * n + i] = cum[(t - 1) * n + i] + r;
        }
        // momentum predictor at t, to be used for returns at t + 1
        lagged_signal = None;
        if spec.embedded_alpha.is_some() && n >= 2 && t > REPORTING_LAG + MOMENTUM_WINDOW {
            let end = t - REPORTING_LAG;
            let start = end - MOMENTUM_WINDOW;
            let raw: Vec<f64> = (0..n).map(|i| cum[end * n + i] - cum[start * n + i]).collect();
            lagged_signal = rank_map(&raw);
        }
    }

    let dates = business_days(spec.start_date, nt);
    let mut close = Grid::missing(nt, n);
    let mut ret = Grid::missing(nt, n);
    let mut caps = Grid::missing(nt, n);
    let mut advs = Grid::missing(nt, n);
    for i in 0..n {
        let mut px = price0[i];
        for t in 0..nt {
            if t > 0 {
                let r = returns[t * n + i];
                px *= 1.0 + r;
                ret.set(t, i, Some(r));
            }
            close.set(t, i, Some(px.max(f64::MIN_POSITIVE)));
            caps.set(t, i, Some(cap[i]));
            advs.set(t, i, Some(adv[i]));
        }
    }

    let fundamentals = synthetic_fundamentals(spec, &cap, &dates);
    MarketPanel::from_parts(PanelParts {
        dates,
        stock_ids: (0..n).map(|i| format!("S{i:04}")).collect(),
        close,
        total_return: ret,
        market_cap: caps,
        adv: advs,
        sector,
        sector_names: (0..ng).map(|g| format!("SECTOR{g}")).collect(),
        fundamentals,
    })
}

fn synthetic_fundamentals(spec: &SyntheticSpec, cap: &[f64], dates: &[NaiveDate]) -> Fundamentals {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ FUNDAMENTALS_SALT);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let (first, last) = (dates[0], *dates.last().unwrap());

    // fiscal quarter ends whose report lands inside the panel, plus one year
    // before so that year-over-year fields exist early on
    let mut q_ends = Vec::new();
    let mut q = quarter_end(first.checked_sub_days(Days::new(365 + REPORT_DELAY_DAYS)).unwrap());
    while q.checked_add_days(Days::new(REPORT_DELAY_DAYS)).unwrap() <= last {
        q_ends.push(q);
        q = quarter_end(q.succ_opt().unwrap());
    }

    let mut records = Vec::new();
    for (stock, &c) in cap.iter().enumerate() {
        let assets_ratio = (0.5 * normal()).exp();
        let equity_ratio = 0.4 + 0.1 * normal().clamp(-2.0, 2.0);
        let payout = (0.3 + 0.15 * normal()).clamp(0.0, 0.9);
        let mut level = 0.0;
        let mut noa_ratio = 0.6 + 0.1 * normal();
        for &qe in &q_ends {
            level += 0.05 * normal();
            noa_ratio += 0.02 * normal();
            let assets = c * assets_ratio * level.exp();
            let net_income = assets * (0.015 + 0.01 * normal());
            let values = [
                (FundamentalField::TotalAssets, assets),
                (FundamentalField::TotalEquity, assets * equity_ratio),
                (FundamentalField::NetOperatingAssets, assets * noa_ratio),
                (FundamentalField::OperatingCashFlow, assets * (0.02 + 0.01 * normal())),
                (FundamentalField::NetIncome, net_income),
                (FundamentalField::Dividends, (net_income * payout).max(0.0)),
            ];
            let report_date = qe.checked_add_days(Days::new(REPORT_DELAY_DAYS)).unwrap();
            records.extend(values.into_iter().map(|(field, value)| FundamentalRecord {
                report_date,
                stock,
                field,
                value,
            }));
        }
    }
    Fundamentals::new(cap.len(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::pearson;

    #[test]
    fn degenerate_model_gives_identical_series() {
        let spec = SyntheticSpec {
            n_stocks: 5,
            n_days: 50,
            idio_vol: 1e-30,
            sector_vol: 1e-30,
            market_beta_dispersion: 0.0,
            ..Default::default()
        };
        let p = generate_synthetic(&spec).unwrap();
        for t in 1..50 {
            let r0 = p.returns().get(t, 0).unwrap();
            for i in 1..5 {
                assert_eq!(p.returns().get(t, i).unwrap(), r0);
            }
        }
    }

    #[test]
    fn independent_stocks_are_uncorrelated() {
        // only idiosyncratic noise left: sample correlations shrink as 1/sqrt(T)
        let spec = SyntheticSpec {
            n_stocks: 4,
            n_days: 5001,
            market_vol: 1e-30,
            sector_vol: 1e-30,
            seed: 11,
            ..Default::default()
        };
        let p = generate_synthetic(&spec).unwrap();
        let cols: Vec<Vec<f64>> = (0..4).map(|i| p.returns().present(i, 1..5001)).collect();
        for a in 0..4 {
            for b in a + 1..4 {
                let rho = pearson(&cols[a], &cols[b]).unwrap();
                assert!(rho.abs() < 0.1, "rho({a},{b}) = {rho}");
            }
        }
    }

    #[test]
    fn same_seed_same_panel() {
        let spec =
            SyntheticSpec { n_stocks: 20, n_days: 400, embedded_alpha: Some(0.05), seed: 3, ..Default::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sectors_round_robin_and_business_days() {
        let p =
            generate_synthetic(&SyntheticSpec { n_stocks: 7, n_days: 10, n_sectors: 3, ..Default::default() }).unwrap();
        assert_eq!(p.sectors(), &[0, 1, 2, 0, 1, 2, 0]);
        assert!(p.dates().iter().all(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)));
        assert!(!p.fundamentals().is_empty());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_synthetic(&SyntheticSpec { idio_vol: 0.0, ..Default::default() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { n_sectors: 0, ..Default::default() }).is_err());
    }
}
