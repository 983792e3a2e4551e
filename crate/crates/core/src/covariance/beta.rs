use serde::{Deserialize, Serialize};

use super::spectral::SpectralCovariance;
use super::CovarianceError;
use crate::data::{cap_weighted_index_returns, MarketPanel, Universe};

/// Regression window: one year of daily returns.
pub const BETA_WINDOW: usize = 252;
/// Fewer overlapping observations than this fall back to `beta = 1`.
const MIN_REGRESSION_OBS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaSource {
    Regression,
    FirstFactor,
}

#[derive(Debug, Clone, Copy)]
pub enum BetaMethod<'a> {
    /// One-factor regression on the cap-weighted universe index.
    Regression { window: usize },
    /// `sigma_i sqrt(lambda_1) v_1i`, rescaled to unit cap-weighted mean.
    FirstFactor(&'a SpectralCovariance),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaVector {
    /// Stock indices, ascending.
    pub stocks: Vec<usize>,
    pub beta: Vec<f64>,
    pub source: BetaSource,
    pub window: usize,
    /// Stocks assigned `beta = 1` for lack of history.
    pub fallbacks: Vec<usize>,
}

impl BetaVector {
    pub fn get(&self, stock: usize) -> Option<f64> {
        self.stocks.binary_search(&stock).ok().map(|k| self.beta[k])
    }
}

/// Computes betas repeatedly over one panel, caching the index series.
#[derive(Debug, Clone)]
pub struct BetaEstimator<'a> {
    panel: &'a MarketPanel,
    index: Vec<Option<f64>>,
}

impl<'a> BetaEstimator<'a> {
    pub fn new(panel: &'a MarketPanel, universe: &Universe) -> Self {
        Self { panel, index: cap_weighted_index_returns(panel, universe) }
    }

    pub fn from_index(panel: &'a MarketPanel, index: Vec<Option<f64>>) -> Self {
        Self { panel, index }
    }

    pub fn index_returns(&self) -> &[Option<f64>] {
        &self.index
    }

    /// Regression betas of `stocks` from returns at indices `t - window .. t`.
    pub fn regression(&self, stocks: &[usize], t: usize, window: usize) -> Result<BetaVector, CovarianceError> {
        if window < 2 {
            return Err(CovarianceError::InvalidParameter(format!("beta window {window} < 2")));
        }
        if t < window || t > self.panel.n_dates() {
            return Err(CovarianceError::InsufficientHistory { required: window, end: t });
        }
        let range = t - window..t;
        let idx: Vec<f64> = self.index[range.clone()].iter().flatten().copied().collect();
        let var = crate::stats::variance(&idx).unwrap_or(0.0);
        if !(var > 0.0) {
            return Err(CovarianceError::Estimation(format!("index variance {var:e} over the beta window")));
        }
        let returns = self.panel.returns();
        let mut beta = Vec::with_capacity(stocks.len());
        let mut fallbacks = Vec::new();
        for &i in stocks {
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                range.clone().filter_map(|s| Some((returns.get(s, i)?, self.index[s]?))).unzip();
            let b = if xs.len() >= MIN_REGRESSION_OBS {
                let vy = crate::stats::variance(&ys).unwrap_or(0.0);
                crate::stats::covariance(&xs, &ys).filter(|_| vy > 0.0).map(|c| c / vy)
            } else {
                None
            };
            beta.push(b.unwrap_or_else(|| {
                fallbacks.push(i);
                1.0
            }));
        }
        Ok(BetaVector { stocks: stocks.to_vec(), beta, source: BetaSource::Regression, window, fallbacks })
    }
}

/// First-factor betas of the model's stocks, normalized so that their
/// market-cap weighted mean (caps of the day before `t`) is one.
pub fn first_factor_beta(
    panel: &MarketPanel,
    model: &SpectralCovariance,
    t: usize,
) -> Result<BetaVector, CovarianceError> {
    let raw = model.first_factor_beta();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &i) in model.stocks.iter().enumerate() {
        if let Some(c) = t.checked_sub(1).and_then(|s| panel.market_cap().get(s, i)) {
            num += c * raw[k];
            den += c;
        }
    }
    let mean = if den > 0.0 { num / den } else { raw.iter().sum::<f64>() / raw.len() as f64 };
    if !(mean.abs() > 0.0) {
        return Err(CovarianceError::Estimation("first-factor betas average to zero".into()));
    }
    Ok(BetaVector {
        stocks: model.stocks.clone(),
        beta: raw.iter().map(|b| b / mean).collect(),
        source: BetaSource::FirstFactor,
        window: model.estimation_window,
        fallbacks: Vec::new(),
    })
}

/// Betas of `stocks` (regression) or of the model's stocks (first factor)
/// as of date index `t`, using data strictly before `t`.
pub fn compute_beta(
    panel: &MarketPanel,
    universe: &Universe,
    stocks: &[usize],
    t: usize,
    method: BetaMethod<'_>,
) -> Result<BetaVector, CovarianceError> {
    match method {
        BetaMethod::Regression { window } => BetaEstimator::new(panel, universe).regression(stocks, t, window),
        BetaMethod::FirstFactor(model) => first_factor_beta(panel, model, t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{estimate_correlation, CorrelationConfig};
    use crate::data::{
        generate_synthetic, select_universe, Fundamentals, Grid, PanelParts, SyntheticSpec, UniverseConfig,
    };
    use chrono::{Days, NaiveDate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn panel(returns: &[Vec<f64>], caps: &[f64]) -> MarketPanel {
        let n = returns.len();
        let nt = returns[0].len();
        let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
        let mut close = Grid::missing(nt, n);
        let mut ret = Grid::missing(nt, n);
        let mut cap = Grid::missing(nt, n);
        let mut adv = Grid::missing(nt, n);
        for i in 0..n {
            let mut px = 50.0;
            for t in 0..nt {
                if t > 0 {
                    px *= 1.0 + returns[i][t];
                    ret.set(t, i, Some(returns[i][t]));
                }
                close.set(t, i, Some(px));
                cap.set(t, i, Some(caps[i]));
                adv.set(t, i, Some(caps[i]));
            }
        }
        MarketPanel::from_parts(PanelParts {
            dates: (0..nt).map(|k| start.checked_add_days(Days::new(k as u64)).unwrap()).collect(),
            stock_ids: (0..n).map(|i| format!("S{i:02}")).collect(),
            close,
            total_return: ret,
            market_cap: cap,
            adv,
            sector: vec![0; n],
            sector_names: vec!["X".into()],
            fundamentals: Fundamentals::default(),
        })
        .unwrap()
    }

    fn universe(p: &MarketPanel) -> Universe {
        select_universe(p, &UniverseConfig { liquidity_size: p.n_stocks(), ..Default::default() }).unwrap()
    }

    #[test]
    fn stock_equal_to_index_has_unit_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r: Vec<f64> = (0..600).map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
        let p = panel(&[r.clone(), r], &[1.0, 3.0]);
        let b = compute_beta(&p, &universe(&p), &[0, 1], 599, BetaMethod::Regression { window: BETA_WINDOW }).unwrap();
        for v in &b.beta {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(b.fallbacks.is_empty());
    }

    #[test]
    fn levered_stock_beta_tends_to_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nt = 3000;
        let m: Vec<f64> = (0..nt).map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
        let lev: Vec<f64> = m.iter().map(|x| 2.0 * x + 0.005 * rng.sample::<f64, _>(StandardNormal)).collect();
        let p = panel(&[m, lev], &[1e9, 1.0]);
        let est = BetaEstimator::new(&p, &universe(&p));
        let b = est.regression(&[1], nt, 2500).unwrap();
        // oracle: OLS slope recomputed directly on the window
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            (nt - 2500..nt).filter_map(|t| Some((p.returns().get(t, 1)?, est.index_returns()[t]?))).unzip();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        assert!((b.beta[0] - sxy / syy).abs() < 1e-12);
        assert!((b.beta[0] - 2.0).abs() < 0.03, "beta = {}", b.beta[0]);
    }

    #[test]
    fn short_history_falls_back_to_one() {
        let r: Vec<f64> = (0..300).map(|t| ((t * 7) % 5) as f64 / 500.0 - 0.004).collect();
        let mut p = panel(&[r.clone(), r], &[1.0, 1.0]).into_parts();
        for t in 0..280 {
            p.close.set(t, 1, None);
            p.total_return.set(t, 1, None);
        }
        let p = MarketPanel::from_parts(p).unwrap();
        let est = BetaEstimator::from_index(&p, (0..300).map(|t| p.returns().get(t, 0)).collect());
        let b = est.regression(&[0, 1], 300, BETA_WINDOW).unwrap();
        assert_eq!(b.fallbacks, vec![1]);
        assert_eq!(b.get(1), Some(1.0));
    }

    #[test]
    fn flat_index_is_an_estimation_error() {
        let p = panel(&[vec![0.0; 300], vec![0.0; 300]], &[1.0, 1.0]);
        let r = compute_beta(&p, &universe(&p), &[0, 1], 300, BetaMethod::Regression { window: BETA_WINDOW });
        assert!(matches!(r, Err(CovarianceError::Estimation(_))));
    }

    #[test]
    fn regression_and_first_factor_betas_agree_in_rank() {
        let p = generate_synthetic(&SyntheticSpec {
            n_stocks: 60,
            n_days: 800,
            sector_vol: 1e-30,
            market_beta_dispersion: 0.4,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let u = universe(&p);
        let stocks: Vec<usize> = (0..60).collect();
        let t = 800;
        let reg = compute_beta(&p, &u, &stocks, t, BetaMethod::Regression { window: 500 }).unwrap();
        let est = estimate_correlation(&p, &stocks, t, &CorrelationConfig::default()).unwrap();
        let model = est.fit(1).unwrap();
        let ff = compute_beta(&p, &u, &stocks, t, BetaMethod::FirstFactor(&model)).unwrap();
        assert_eq!(ff.source, BetaSource::FirstFactor);
        let rho = crate::stats::spearman(&reg.beta, &ff.beta).unwrap();
        assert!(rho > 0.95, "spearman = {rho}");
        let caps: Vec<f64> = stocks.iter().map(|&i| p.market_cap().get(t - 1, i).unwrap()).collect();
        let wmean = caps.iter().zip(&ff.beta).map(|(c, b)| c * b).sum::<f64>() / caps.iter().sum::<f64>();
        assert!((wmean - 1.0).abs() < 1e-12);
    }
}
