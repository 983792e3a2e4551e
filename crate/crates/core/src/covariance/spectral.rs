use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::CovarianceError;

/// Tolerance on symmetry / unit diagonal of an input correlation matrix.
const INPUT_TOLERANCE: f64 = 1e-10;
/// Most negative eigenvalue accepted as numerical noise.
const PSD_TOLERANCE: f64 = 1e-8;
/// Smallest admissible residual variance.
const MIN_EPSILON2: f64 = 1e-12;

/// Full eigendecomposition of a correlation matrix, eigenvalues descending.
///
/// Each eigenvector is oriented so that its largest-magnitude component is
/// positive (first such component on exact ties).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as columns, in the order of `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl CorrelationSpectrum {
    pub fn decompose(correlation: &DMatrix<f64>) -> Self {
        let n = correlation.nrows();
        let eig = SymmetricEigen::new(correlation.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut vectors = DMatrix::zeros(n, n);
        let mut values = Vec::with_capacity(n);
        for (col, &k) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(k).clone_owned();
            let mut pivot = 0;
            for i in 1..n {
                if v[i].abs() > v[pivot].abs() {
                    pivot = i;
                }
            }
            if v[pivot] < 0.0 {
                v.neg_mut();
            }
            vectors.set_column(col, &v);
            values.push(eig.eigenvalues[k]);
        }
        Self { eigenvalues: values, eigenvectors: vectors }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Keeps the top `k` eigenpairs and sets the residual so that
    /// `Tr C = sum_i sigma_i^2`.
    pub fn clip(&self, sigma: &[f64], k: usize) -> Result<SpectralCovariance, CovarianceError> {
        let n = self.dim();
        if sigma.len() != n {
            return Err(CovarianceError::InvalidParameter(format!("{} volatilities for dimension {n}", sigma.len())));
        }
        if k == 0 || k >= n {
            return Err(CovarianceError::InvalidParameter(format!("k = {k} must satisfy 1 <= k < N = {n}")));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(CovarianceError::InvalidParameter(format!("volatility {s} must be positive")));
        }
        let min = self.eigenvalues[n - 1];
        if min < -PSD_TOLERANCE {
            return Err(CovarianceError::Estimation(format!("correlation is not PSD: smallest eigenvalue {min:e}")));
        }
        let kept = &self.eigenvalues[..k];
        if kept[k - 1] <= 0.0 {
            return Err(CovarianceError::Estimation(format!("retained eigenvalue {} is not positive", kept[k - 1])));
        }
        // eps2 restores the total variance: Tr C = sum_i sigma_i^2
        let s2: f64 = sigma.iter().map(|s| s * s).sum();
        let explained: f64 = (0..n)
            .map(|i| sigma[i] * sigma[i] * (0..k).map(|a| kept[a] * self.eigenvectors[(i, a)].powi(2)).sum::<f64>())
            .sum();
        let epsilon2 = 1.0 - explained / s2;
        if !(epsilon2 > MIN_EPSILON2) {
            return Err(CovarianceError::Estimation(format!(
                "residual variance {epsilon2:e} vanishes: the top {k} modes carry the whole trace"
            )));
        }
        Ok(SpectralCovariance {
            stocks: (0..n).collect(),
            sigma: DVector::from_column_slice(sigma),
            eigenvalues: kept.to_vec(),
            eigenvectors: self.eigenvectors.columns(0, k).clone_owned(),
            epsilon2,
            estimation_window: 0,
        })
    }
}

/// Eigenvalue-clipped covariance `D (V L V^T + eps2 I) D`, `D = diag(sigma)`,
/// with `eps2` chosen so that `Tr C = sum_i sigma_i^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SpectralCovarianceJson", try_from = "SpectralCovarianceJson")]
pub struct SpectralCovariance {
    /// Stock indices (panel columns) of the rows, ascending.
    pub stocks: Vec<usize>,
    pub sigma: DVector<f64>,
    pub eigenvalues: Vec<f64>,
    /// `N x k`, unit-norm orthogonal columns.
    pub eigenvectors: DMatrix<f64>,
    pub epsilon2: f64,
    pub estimation_window: usize,
}

/// Clips a correlation matrix to its top `k` modes; see the module docs.
pub fn clip_spectrum(
    correlation: &DMatrix<f64>,
    sigma: &[f64],
    k: usize,
) -> Result<SpectralCovariance, CovarianceError> {
    let n = correlation.nrows();
    if correlation.ncols() != n {
        return Err(CovarianceError::InvalidParameter("correlation must be square".into()));
    }
    for a in 0..n {
        if (correlation[(a, a)] - 1.0).abs() > INPUT_TOLERANCE {
            return Err(CovarianceError::InvalidParameter(format!("diagonal entry {a} is {}", correlation[(a, a)])));
        }
        for b in a + 1..n {
            if (correlation[(a, b)] - correlation[(b, a)]).abs() > INPUT_TOLERANCE {
                return Err(CovarianceError::InvalidParameter(format!("correlation not symmetric at ({a}, {b})")));
            }
        }
    }
    CorrelationSpectrum::decompose(correlation).clip(sigma, k)
}

impl SpectralCovariance {
    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `C y` without forming `C`.
    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        let z = y.component_mul(&self.sigma);
        let u = self.eigenvectors.tr_mul(&z);
        let scaled = DVector::from_iterator(u.len(), u.iter().zip(&self.eigenvalues).map(|(u, l)| u * l));
        let inner = &self.eigenvectors * scaled + z * self.epsilon2;
        inner.component_mul(&self.sigma)
    }

    /// `C^{-1} y` via the Woodbury identity on the `k` retained modes:
    /// `C^{-1} = D^{-1} eps2^{-1} (I - V diag(l / (l + eps2)) V^T) D^{-1}`.
    pub fn apply_inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        let z = y.component_div(&self.sigma);
        let u = self.eigenvectors.tr_mul(&z);
        let shrink =
            DVector::from_iterator(u.len(), u.iter().zip(&self.eigenvalues).map(|(u, l)| u * l / (l + self.epsilon2)));
        let inner = (z - &self.eigenvectors * shrink) / self.epsilon2;
        inner.component_div(&self.sigma)
    }

    /// `x^T C x`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.apply(x))
    }

    /// Dense `C`, for diagnostics and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let l = DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues));
        let mut core = &self.eigenvectors * l * self.eigenvectors.transpose();
        for i in 0..n {
            core[(i, i)] += self.epsilon2;
        }
        let d = DMatrix::from_diagonal(&self.sigma);
        &d * core * &d
    }

    /// `Tr C = sum_i sigma_i^2 (sum_a lambda_a v_ai^2 + eps2)`.
    pub fn trace(&self) -> f64 {
        (0..self.dim())
            .map(|i| {
                let modes: f64 = (0..self.k()).map(|a| self.eigenvalues[a] * self.eigenvectors[(i, a)].powi(2)).sum();
                self.sigma[i].powi(2) * (modes + self.epsilon2)
            })
            .sum()
    }

    /// Fraction of `x^T C x` carried by the retained modes.
    pub fn factor_variance_share(&self, x: &DVector<f64>) -> f64 {
        let total = self.quadratic_form(x);
        if total <= 0.0 {
            return 0.0;
        }
        let u = self.eigenvectors.tr_mul(&x.component_mul(&self.sigma));
        let modes: f64 = u.iter().zip(&self.eigenvalues).map(|(u, l)| l * u * u).sum();
        modes / total
    }

    /// Betas implied by the first mode: `sigma_i sqrt(lambda_1) v_1i`.
    pub fn first_factor_beta(&self) -> Vec<f64> {
        let s = self.eigenvalues[0].sqrt();
        (0..self.dim()).map(|i| self.sigma[i] * s * self.eigenvectors[(i, 0)]).collect()
    }

    /// Position of a panel stock in this model.
    pub fn position(&self, stock: usize) -> Option<usize> {
        self.stocks.binary_search(&stock).ok()
    }
}

/// JSON layout of a cached model. `eigenvectors` holds `k` rows of length
/// `N`, one per retained mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpectralCovarianceJson {
    stocks: Vec<usize>,
    sigma: Vec<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<Vec<f64>>,
    epsilon2: f64,
    k: usize,
    estimation_window: usize,
}

impl From<SpectralCovariance> for SpectralCovarianceJson {
    fn from(m: SpectralCovariance) -> Self {
        Self {
            k: m.k(),
            eigenvectors: m.eigenvectors.column_iter().map(|c| c.iter().copied().collect()).collect(),
            stocks: m.stocks,
            sigma: m.sigma.iter().copied().collect(),
            eigenvalues: m.eigenvalues,
            epsilon2: m.epsilon2,
            estimation_window: m.estimation_window,
        }
    }
}

impl TryFrom<SpectralCovarianceJson> for SpectralCovariance {
    type Error = String;

    fn try_from(j: SpectralCovarianceJson) -> Result<Self, Self::Error> {
        let n = j.sigma.len();
        if j.k != j.eigenvalues.len() || j.k != j.eigenvectors.len() {
            return Err(format!(
                "k = {} but {} eigenvalues and {} eigenvectors",
                j.k,
                j.eigenvalues.len(),
                j.eigenvectors.len()
            ));
        }
        if j.stocks.len() != n || j.eigenvectors.iter().any(|v| v.len() != n) {
            return Err(format!("inconsistent dimension, expected {n}"));
        }
        if !(j.epsilon2 > 0.0) {
            return Err(format!("epsilon2 = {} must be positive", j.epsilon2));
        }
        let flat: Vec<f64> = j.eigenvectors.iter().flatten().copied().collect();
        Ok(Self {
            stocks: j.stocks,
            sigma: DVector::from_vec(j.sigma),
            eigenvalues: j.eigenvalues,
            eigenvectors: DMatrix::from_column_slice(n, j.k, &flat),
            epsilon2: j.epsilon2,
            estimation_window: j.estimation_window,
        })
    }
}
