//! Distance matrices, the exponential covariance `σ² exp(−d/φ)`, the total
//! observation covariance `C + τ²I` and its Cholesky factor.

use alloc::vec::Vec;

use nalgebra::Cholesky;
use num_traits::Float;

use crate::linalg::{hypot, lower_solve, lower_solve_vec, lower_t_solve_vec};
use crate::{Error, Matrix, Result, Vector};

/// Planar point locations.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Coordinates {
    pub points: Vec<[f64; 2]>,
}

impl Coordinates {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("coordinates must be finite"));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Coordinates of the listed rows, in order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            points: idx.iter().map(|&i| self.points[i]).collect(),
        }
    }

    /// Largest pairwise distance; zero for fewer than two points.
    pub fn max_distance(&self) -> f64 {
        let mut best = 0.0_f64;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.max(distance(*a, *b));
            }
        }
        best
    }
}

/// Nugget, spatial variance and range of the covariance model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpatialParams {
    pub tau2: f64,
    pub sigma2: f64,
    pub phi: f64,
}

impl SpatialParams {
    pub fn new(tau2: f64, sigma2: f64, phi: f64) -> Result<Self> {
        let p = Self { tau2, sigma2, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau2.is_finite() && self.tau2 >= 0.0) {
            return Err(Error::InvalidParam("tau2 must be finite and non-negative"));
        }
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(Error::InvalidParam(
                "sigma2 must be finite and non-negative",
            ));
        }
        if !(self.phi.is_finite() && self.phi > 0.0) {
            return Err(Error::InvalidParam("phi must be finite and positive"));
        }
        Ok(())
    }
}

#[inline]
pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    hypot(a[0] - b[0], a[1] - b[1])
}

/// Symmetric Euclidean distance matrix with an exactly zero diagonal.
pub fn distance_matrix(coords: &Coordinates) -> Matrix {
    let n = coords.len();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = distance(coords.points[i], coords.points[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

#[inline]
fn exp_kernel(d: f64, sigma2: f64, phi: f64) -> f64 {
    if d == 0.0 {
        sigma2
    } else {
        sigma2 * Float::exp(-d / phi)
    }
}

fn check_kernel(sigma2: f64, phi: f64) -> Result<()> {
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(Error::InvalidParam("phi must be positive"));
    }
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParam("sigma2 must be non-negative"));
    }
    Ok(())
}

/// Exponential covariance `σ² exp(−d/φ)` applied element-wise to `dist`.
pub fn exp_covariance(dist: &Matrix, sigma2: f64, phi: f64) -> Result<Matrix> {
    check_kernel(sigma2, phi)?;
    Ok(dist.map(|d| exp_kernel(d, sigma2, phi)))
}

/// `C + τ²I`.
pub fn total_covariance(c: &Matrix, tau2: f64) -> Matrix {
    let mut s = c.clone();
    for i in 0..s.nrows().min(s.ncols()) {
        s[(i, i)] += tau2;
    }
    s
}

/// Covariances between new and training locations, `m × n`.
pub fn cross_covariance(
    coords_new: &Coordinates,
    coords_train: &Coordinates,
    sigma2: f64,
    phi: f64,
) -> Result<Matrix> {
    check_kernel(sigma2, phi)?;
    let (m, n) = (coords_new.len(), coords_train.len());
    Ok(Matrix::from_fn(m, n, |i, j| {
        exp_kernel(
            distance(coords_new.points[i], coords_train.points[j]),
            sigma2,
            phi,
        )
    }))
}

/// Retries allowed by the jitter policy after the first failed factorization.
pub const JITTER_RETRIES: usize = 3;
/// Initial jitter, relative to the mean diagonal.
pub const JITTER_INITIAL: f64 = 1e-10;

/// Lower Cholesky factor `L` with `Σ = L Lᵀ` (plus any jitter that was added).
#[derive(Debug, Clone, PartialEq)]
pub struct CovFactor {
    l: Matrix,
    jitter: f64,
}

impl CovFactor {
    pub fn l(&self) -> &Matrix {
        &self.l
    }

    /// Diagonal jitter that was added before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `log |Σ| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| Float::ln(*v)).sum::<f64>()
    }

    /// `L⁻¹ b`.
    pub fn whiten(&self, b: &Vector) -> Result<Vector> {
        lower_solve_vec(&self.l, b)
    }

    /// `L⁻¹ B`.
    pub fn whiten_mat(&self, b: &Matrix) -> Result<Matrix> {
        lower_solve(&self.l, b)
    }

    /// `Σ⁻¹ b`.
    pub fn solve(&self, b: &Vector) -> Result<Vector> {
        let w = lower_solve_vec(&self.l, b)?;
        lower_t_solve_vec(&self.l, &w)
    }

    /// `bᵀ Σ⁻¹ b`.
    pub fn quad_form(&self, b: &Vector) -> Result<f64> {
        Ok(self.whiten(b)?.norm_squared())
    }
}

/// Cholesky factor of a symmetric matrix.
///
/// On failure the diagonal is inflated by `1e-10 · trace/n`, escalating ten-fold
/// for up to three retries, before giving up with
/// [`Error::NotPositiveDefinite`].
pub fn cholesky_factor(sigma: &Matrix) -> Result<CovFactor> {
    let n = sigma.nrows();
    if n != sigma.ncols() {
        return Err(Error::DimensionMismatch {
            what: "covariance (square)",
            expected: n,
            found: sigma.ncols(),
        });
    }
    if n == 0 {
        return Err(Error::Empty("covariance matrix"));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    if let Some(c) = Cholesky::new(sigma.clone()) {
        return Ok(CovFactor {
            l: c.unpack(),
            jitter: 0.0,
        });
    }
    let scale = (sigma.trace() / n as f64).abs();
    let mut jitter = JITTER_INITIAL * scale;
    for _ in 0..JITTER_RETRIES {
        if jitter > 0.0 {
            let mut s = sigma.clone();
            for i in 0..n {
                s[(i, i)] += jitter;
            }
            if let Some(c) = Cholesky::new(s) {
                return Ok(CovFactor {
                    l: c.unpack(),
                    jitter,
                });
            }
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite)
}

/// Covariance of the observations at `dist` under `theta`, factored.
pub fn factor_for(dist: &Matrix, theta: &SpatialParams) -> Result<CovFactor> {
    if theta.sigma2 == 0.0 {
        return scaled_identity_factor(dist.nrows(), theta.tau2);
    }
    let c = exp_covariance(dist, theta.sigma2, theta.phi)?;
    cholesky_factor(&total_covariance(&c, theta.tau2))
}

/// Factor of `τ² I`, built without a decomposition.
pub fn scaled_identity_factor(n: usize, tau2: f64) -> Result<CovFactor> {
    if !(tau2 > 0.0) || !tau2.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(CovFactor {
        l: Matrix::from_diagonal_element(n, n, Float::sqrt(tau2)),
        jitter: 0.0,
    })
}
