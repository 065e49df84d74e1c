use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues down to this (scaled by the largest magnitude when above 1)
/// are treated as rounding noise and clamped to zero.
pub const EIGEN_TOLERANCE: f64 = 1e-8;
/// Smallest Fréchet distance accepted as rounding noise before clamping.
const DISTANCE_TOLERANCE: f64 = 1e-10;
const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Gaussian fit of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::shape(
                &[cov.nrows(), cov.ncols()],
                &[d, d],
                "feature covariance",
            ));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature statistics".into()));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOLERANCE {
            return Err(Error::Domain {
                op: "feature statistics",
                detail: format!("covariance asymmetric by {:e}", asym),
            });
        }
        let stats = FeatureStats { mean, cov, count };
        psd_eigen(&stats.cov, "feature covariance")?;
        Ok(stats)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance of the rows of `features` (N×D).
pub fn gaussian_stats(features: &DMatrix<f64>) -> Result<FeatureStats> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::Domain {
            op: "gaussian_stats",
            detail: format!("need at least 2 samples, got {}", n),
        });
    }
    if d == 0 {
        return Err(Error::config("features have zero dimensions"));
    }
    let mean = DVector::from_iterator(d, features.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    // Products of a matrix with its transpose are symmetric only up to rounding.
    cov = (&cov + cov.transpose()) * 0.5;
    FeatureStats::new(mean, cov, n)
}

/// Eigendecomposition of a symmetric matrix whose eigenvalues are clamped
/// at zero; errors on eigenvalues below the tolerance.
fn psd_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    for v in eig.eigenvalues.iter_mut() {
        if *v < -EIGEN_TOLERANCE * scale {
            return Err(Error::Domain {
                op: "frechet_distance",
                detail: format!("{} is indefinite (eigenvalue {:e})", what, v),
            });
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(m, what)?;
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * root * eig.eigenvectors.transpose())
}

/// ‖μa − μb‖² + tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½).
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(&[a.dim()], &[b.dim()], "feature dimensions"));
    }
    if a.mean == b.mean && a.cov == b.cov {
        // The trace terms cancel only up to rounding otherwise.
        return Ok(0.0);
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let sa = psd_sqrt(&a.cov, "first covariance")?;
    let mut inner = &sa * &b.cov * &sa;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = psd_eigen(&inner, "covariance product")?
        .eigenvalues
        .iter()
        .map(|v| v.sqrt())
        .sum();
    let d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if d < -DISTANCE_TOLERANCE * (1.0 + a.cov.trace() + b.cov.trace()) {
        return Err(Error::Domain {
            op: "frechet_distance",
            detail: format!("negative distance {:e}", d),
        });
    }
    Ok(d.max(0.0))
}
