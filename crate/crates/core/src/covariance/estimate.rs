use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::spectral::{clip_spectrum, CorrelationSpectrum, SpectralCovariance};
use super::CovarianceError;
use crate::data::MarketPanel;

/// Default estimation window: two years of daily returns.
pub const DEFAULT_WINDOW: usize = 500;
/// Minimum valid observations (per stock and per pair).
pub const MIN_OBSERVATIONS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationConfig {
    pub window: usize,
    pub min_obs: usize,
    /// Eigenvalues below `-psd_tolerance` trigger a projection onto the
    /// PSD cone.
    pub psd_tolerance: f64,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, min_obs: MIN_OBSERVATIONS, psd_tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEstimate {
    /// Stocks kept in the estimate, ascending.
    pub stocks: Vec<usize>,
    /// Daily return volatility of each kept stock.
    pub sigma: Vec<f64>,
    pub correlation: DMatrix<f64>,
    /// Candidates with fewer than `min_obs` valid returns.
    pub excluded: Vec<usize>,
    pub window: usize,
    /// Whether pairwise estimation needed a projection onto the PSD cone.
    pub psd_projected: bool,
}

impl CorrelationEstimate {
    pub fn spectrum(&self) -> CorrelationSpectrum {
        CorrelationSpectrum::decompose(&self.correlation)
    }

    /// Clipped `k`-factor model carrying this estimate's stocks and window.
    pub fn fit(&self, k: usize) -> Result<SpectralCovariance, CovarianceError> {
        let model = clip_spectrum(&self.correlation, &self.sigma, k)?;
        Ok(self.label(model))
    }

    /// Like [`Self::fit`] from an already computed spectrum of this
    /// estimate, so that several `k` share one decomposition.
    pub fn fit_spectrum(
        &self,
        spectrum: &CorrelationSpectrum,
        k: usize,
    ) -> Result<SpectralCovariance, CovarianceError> {
        let model = spectrum.clip(&self.sigma, k)?;
        Ok(self.label(model))
    }

    fn label(&self, mut model: SpectralCovariance) -> SpectralCovariance {
        model.stocks = self.stocks.clone();
        model.estimation_window = self.window;
        model
    }
}

/// Estimates the correlation matrix and volatilities of `stocks` from the
/// daily returns at date indices `end - window .. end` (strictly before
/// `end`).
///
/// Volatilities are equal-weighted sample standard deviations of each
/// stock's valid returns. When every kept stock has a full window the
/// correlation is the plain sample correlation; otherwise each pair uses its
/// overlapping days (pairs overlapping less than `min_obs` days get zero
/// correlation) and the result is projected back to a valid correlation
/// matrix if it is not PSD.
pub fn estimate_correlation(
    panel: &MarketPanel,
    stocks: &[usize],
    end: usize,
    config: &CorrelationConfig,
) -> Result<CorrelationEstimate, CovarianceError> {
    if config.window < 2 {
        return Err(CovarianceError::InvalidParameter(format!("window {} < 2", config.window)));
    }
    if end < config.window || end > panel.n_dates() {
        return Err(CovarianceError::InsufficientHistory { required: config.window, end });
    }
    let range = end - config.window..end;
    let returns = panel.returns();

    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
    for &i in stocks {
        let col: Vec<Option<f64>> = returns.column(i, range.clone()).collect();
        let valid = col.iter().flatten().count();
        if valid >= config.min_obs.max(2) {
            kept.push(i);
            columns.push(col);
        } else {
            excluded.push(i);
        }
    }
    if kept.len() < 2 {
        return Err(CovarianceError::InsufficientData { usable: kept.len(), min_obs: config.min_obs });
    }

    let n = kept.len();
    let mut sigma = Vec::with_capacity(n);
    for (k, col) in columns.iter().enumerate() {
        let v: Vec<f64> = col.iter().flatten().copied().collect();
        let s = crate::stats::std_dev(&v).unwrap_or(0.0);
        if !(s > 0.0) {
            return Err(CovarianceError::Estimation(format!(
                "stock {} has zero return variance over the window",
                panel.stock_ids()[kept[k]]
            )));
        }
        sigma.push(s);
    }

    let complete = columns.iter().all(|c| c.iter().all(Option::is_some));
    let mut psd_projected = false;
    let correlation = if complete {
        let t = config.window;
        let mut z = DMatrix::<f64>::zeros(t, n);
        for (k, col) in columns.iter().enumerate() {
            let m = col.iter().map(|v| v.unwrap()).sum::<f64>() / t as f64;
            for (row, v) in col.iter().enumerate() {
                z[(row, k)] = (v.unwrap() - m) / sigma[k];
            }
        }
        let mut c = z.tr_mul(&z) / (t - 1) as f64;
        symmetrize_unit_diagonal(&mut c);
        c
    } else {
        let mut c = DMatrix::<f64>::identity(n, n);
        for a in 0..n {
            for b in a + 1..n {
                let (xs, ys): (Vec<f64>, Vec<f64>) =
                    columns[a].iter().zip(&columns[b]).filter_map(|(x, y)| Some(((*x)?, (*y)?))).unzip();
                let rho = if xs.len() >= config.min_obs.max(2) {
                    crate::stats::pearson(&xs, &ys).unwrap_or(0.0)
                } else {
                    0.0
                };
                c[(a, b)] = rho;
                c[(b, a)] = rho;
            }
        }
        let min_eig = SymmetricEigen::new(c.clone()).eigenvalues.min();
        if min_eig < -config.psd_tolerance {
            c = nearest_correlation(&c);
            psd_projected = true;
        }
        c
    };

    Ok(CorrelationEstimate { stocks: kept, sigma, correlation, excluded, window: config.window, psd_projected })
}

fn symmetrize_unit_diagonal(c: &mut DMatrix<f64>) {
    let n = c.nrows();
    for a in 0..n {
        c[(a, a)] = 1.0;
        for b in a + 1..n {
            let v = 0.5 * (c[(a, b)] + c[(b, a)]);
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
}

/// Clips negative eigenvalues to zero and rescales back to a unit diagonal.
fn nearest_correlation(c: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c.clone());
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..out.nrows()).map(|i| out[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    for a in 0..out.nrows() {
        for b in 0..out.ncols() {
            out[(a, b)] /= d[a] * d[b];
        }
    }
    symmetrize_unit_diagonal(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Fundamentals, Grid, PanelParts, SyntheticSpec};
    use chrono::{Days, NaiveDate};

    fn panel_from_returns(cols: &[Vec<Option<f64>>]) -> MarketPanel {
        let n = cols.len();
        let nt = cols[0].len() + 1;
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let mut close = Grid::missing(nt, n);
        let mut ret = Grid::missing(nt, n);
        let mut cap = Grid::missing(nt, n);
        for i in 0..n {
            let mut px = 100.0;
            close.set(0, i, Some(px));
            for t in 1..nt {
                cap.set(t, i, Some(1.0));
                match cols[i][t - 1] {
                    Some(r) => {
                        px *= 1.0 + r;
                        close.set(t, i, Some(px));
                        ret.set(t, i, Some(r));
                    }
                    None => close.set(t, i, None),
                }
            }
        }
        MarketPanel::from_parts(PanelParts {
            dates: (0..nt).map(|k| start.checked_add_days(Days::new(k as u64)).unwrap()).collect(),
            stock_ids: (0..n).map(|i| format!("S{i}")).collect(),
            close,
            total_return: ret,
            market_cap: cap,
            adv: Grid::missing(nt, n),
            sector: vec![0; n],
            sector_names: vec!["X".into()],
            fundamentals: Fundamentals::default(),
        })
        .unwrap()
    }

    #[test]
    fn identical_series_are_perfectly_correlated() {
        let r: Vec<Option<f64>> = (0..120).map(|k| Some(((k * 37) % 11) as f64 / 100.0 - 0.05)).collect();
        let p = panel_from_returns(&[r.clone(), r]);
        let est =
            estimate_correlation(&p, &[0, 1], 121, &CorrelationConfig { window: 120, ..Default::default() }).unwrap();
        assert!((est.correlation[(0, 1)] - 1.0).abs() < 1e-12);
        assert_eq!(est.sigma[0], est.sigma[1]);
        assert_eq!(est.correlation[(0, 0)], 1.0);
    }

    #[test]
    fn independent_series_have_small_correlation() {
        let panel = generate_synthetic(&SyntheticSpec {
            n_stocks: 2,
            n_days: 5001,
            market_vol: 1e-30,
            sector_vol: 1e-30,
            seed: 21,
            ..Default::default()
        })
        .unwrap();
        let est =
            estimate_correlation(&panel, &[0, 1], 5001, &CorrelationConfig { window: 5000, ..Default::default() })
                .unwrap();
        assert!(est.correlation[(0, 1)].abs() < 0.05);
    }

    #[test]
    fn unit_diagonal_and_exclusion_of_short_histories() {
        let full: Vec<Option<f64>> = (0..200).map(|k| Some(((k * 13) % 7) as f64 / 100.0 - 0.03)).collect();
        let other: Vec<Option<f64>> = (0..200).map(|k| Some(((k * 29) % 5) as f64 / 100.0 - 0.02)).collect();
        let mut sparse = vec![None; 200];
        for (k, slot) in sparse.iter_mut().enumerate().take(30) {
            *slot = Some(k as f64 / 1000.0);
        }
        let mut gappy = full.clone();
        for k in (0..200).step_by(3) {
            gappy[k] = None;
        }
        let p = panel_from_returns(&[full, other, sparse, gappy]);
        let est =
            estimate_correlation(&p, &[0, 1, 2, 3], 201, &CorrelationConfig { window: 200, ..Default::default() })
                .unwrap();
        assert_eq!(est.stocks, vec![0, 1, 3]);
        assert_eq!(est.excluded, vec![2]);
        for a in 0..3 {
            assert_eq!(est.correlation[(a, a)], 1.0);
        }
        let min_eig = SymmetricEigen::new(est.correlation.clone()).eigenvalues.min();
        assert!(min_eig >= -1e-8);
        // pairwise-complete: gappy is a thinned copy of `full`
        let pair =
            estimate_correlation(&p, &[0, 3], 201, &CorrelationConfig { window: 200, ..Default::default() }).unwrap();
        assert!((pair.correlation[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn history_shortfall_is_reported() {
        let r: Vec<Option<f64>> = (0..50).map(|k| Some(k as f64 / 1000.0)).collect();
        let p = panel_from_returns(&[r.clone(), r]);
        assert!(matches!(
            estimate_correlation(&p, &[0, 1], 40, &CorrelationConfig::default()),
            Err(CovarianceError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn nearest_correlation_repairs_indefinite_input() {
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        assert!(SymmetricEigen::new(c.clone()).eigenvalues.min() < 0.0);
        let fixed = nearest_correlation(&c);
        assert!(SymmetricEigen::new(fixed.clone()).eigenvalues.min() > -1e-12);
        for a in 0..3 {
            assert!((fixed[(a, a)] - 1.0).abs() < 1e-15);
        }
    }
}
