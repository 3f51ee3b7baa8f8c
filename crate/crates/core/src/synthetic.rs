//! Synthetic datasets: correlated and pure-noise predictors mixed by a random
//! rotation, a sparse linear truth and exponentially correlated residuals on
//! a square grid.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::spatial::{
    cholesky_factor, distance_matrix, exp_covariance, Coordinates, SpatialParams,
};
use crate::{rng, Error, Matrix, Result, Vector};

/// Generator settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SyntheticConfig {
    pub grid_side: usize,
    /// When set, this many points drawn uniformly over the square replace
    /// the grid.
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub scattered_points: Option<usize>,
    pub coord_range: (f64, f64),
    pub n_corr: usize,
    pub n_noise: usize,
    pub condition_number: f64,
    pub spectrum_scale: SpectrumScale,
    pub beta_int: f64,
    pub beta_reg: Vec<f64>,
    pub theta_true: SpatialParams,
    pub seed: u64,
    /// When set, the rotation is drawn from this seed instead of `seed`, so
    /// it stays fixed across replicates.
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub rotation_seed: Option<u64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            grid_side: 20,
            scattered_points: None,
            coord_range: (-0.5, 0.5),
            n_corr: 9,
            n_noise: 5,
            condition_number: 30.0,
            spectrum_scale: SpectrumScale::UnitMax,
            beta_int: 20.0,
            beta_reg: alloc::vec![1.0, 2.0, 3.0, 2.0, 1.0],
            theta_true: SpatialParams {
                tau2: 0.25,
                sigma2: 1.0,
                phi: 0.5,
            },
            seed: 0,
            rotation_seed: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta_reg.len() > self.n_corr {
            return Err(Error::InvalidConfig("beta_reg longer than n_corr".into()));
        }
        if !(self.condition_number >= 1.0) || !self.condition_number.is_finite() {
            return Err(Error::InvalidConfig(
                "condition_number must be at least 1".into(),
            ));
        }
        if self.n_corr < 2 {
            return Err(Error::InvalidConfig("n_corr must be at least 2".into()));
        }
        let n = self.n_points();
        if n < 2 {
            return Err(Error::InvalidConfig("need at least two locations".into()));
        }
        let (lo, hi) = self.coord_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidConfig(
                "coord_range must be increasing".into(),
            ));
        }
        if self.beta_reg.iter().any(|b| !b.is_finite()) || !self.beta_int.is_finite() {
            return Err(Error::InvalidConfig("coefficients must be finite".into()));
        }
        self.theta_true
            .validate()
            .map_err(|e| Error::InvalidConfig(alloc::format!("theta_true: {e}")))
    }

    pub fn n_points(&self) -> usize {
        self.scattered_points
            .unwrap_or(self.grid_side * self.grid_side)
    }

    pub fn n_predictors(&self) -> usize {
        self.n_corr + self.n_noise
    }
}

/// Overall scale of the correlated block's eigenvalues. The shape (inverses
/// linear, ratio `condition_number`) is the same for both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SpectrumScale {
    /// Largest eigenvalue 1.
    #[default]
    UnitMax,
    /// Eigenvalues sum to `n_corr`: unit average predictor variance.
    UnitTrace,
}

/// Generated data with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub coords: Coordinates,
    /// `N × (n_corr + n_noise)` raw predictors.
    pub z: Matrix,
    pub y: Vector,
    pub eta_plus_eps: Vector,
    /// Intercept followed by the rotated slopes.
    pub beta_true: Vector,
    pub theta_true: SpatialParams,
    pub seed: u64,
}

/// Uniformly distributed orthonormal matrix: QR of a Gaussian matrix with the
/// signs fixed so that `R` has a positive diagonal.
pub fn random_orthonormal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `λ_i = 1 / (1 + (i−1)(c−1)/(n−1))`: inverses increasing linearly from 1
/// to `c`.
pub fn correlated_spectrum(n_corr: usize, condition_number: f64) -> Vec<f64> {
    (0..n_corr)
        .map(|i| 1.0 / (1.0 + i as f64 * (condition_number - 1.0) / (n_corr - 1).max(1) as f64))
        .collect()
}

/// `Q diag(λ) Qᵀ` with `Q` a random orthonormal frame.
pub fn build_correlated_covariance<R: Rng + ?Sized>(
    n_corr: usize,
    condition_number: f64,
    rng: &mut R,
) -> Matrix {
    let (q, lambda) = correlated_frame(n_corr, condition_number, SpectrumScale::UnitMax, rng);
    &q * Matrix::from_diagonal(&Vector::from_vec(lambda)) * q.transpose()
}

/// [`correlated_spectrum`] rescaled per `scale`.
pub fn scaled_spectrum(n_corr: usize, condition_number: f64, scale: SpectrumScale) -> Vec<f64> {
    let mut l = correlated_spectrum(n_corr, condition_number);
    if scale == SpectrumScale::UnitTrace {
        let f = n_corr as f64 / l.iter().sum::<f64>();
        l.iter_mut().for_each(|v| *v *= f);
    }
    l
}

fn correlated_frame<R: Rng + ?Sized>(
    n_corr: usize,
    condition_number: f64,
    scale: SpectrumScale,
    rng: &mut R,
) -> (Matrix, Vec<f64>) {
    (
        random_orthonormal(n_corr, rng),
        scaled_spectrum(n_corr, condition_number, scale),
    )
}

/// Predictors before rotation, and the rotation.
pub(crate) struct PredictorDraw {
    pub unrotated: Matrix,
    pub rotation: Matrix,
}

fn draw_predictors<R: Rng + ?Sized, S: Rng + ?Sized>(
    config: &SyntheticConfig,
    n: usize,
    rng: &mut R,
    rot_rng: &mut S,
) -> PredictorDraw {
    let (q, lambda) = correlated_frame(
        config.n_corr,
        config.condition_number,
        config.spectrum_scale,
        rng,
    );
    let root = &q
        * Matrix::from_diagonal(&Vector::from_iterator(
            lambda.len(),
            lambda.iter().map(|l| Float::sqrt(*l)),
        ));
    let w = Matrix::from_fn(n, config.n_corr, |_, _| rng.sample(StandardNormal));
    let corr = w * root.transpose();
    let p = config.n_predictors();
    let mut unrotated = Matrix::zeros(n, p);
    unrotated.columns_mut(0, config.n_corr).copy_from(&corr);
    for j in config.n_corr..p {
        for i in 0..n {
            unrotated[(i, j)] = rng.sample(StandardNormal);
        }
    }
    PredictorDraw {
        unrotated,
        rotation: random_orthonormal(p, rot_rng),
    }
}

/// Raw predictors `[correlated | noise] · P_rot` for `n` locations and the
/// rotation `P_rot`.
pub fn generate_predictors<R: Rng + ?Sized>(
    config: &SyntheticConfig,
    n: usize,
    rng: &mut R,
) -> (Matrix, Matrix) {
    let mut rot = rng::seeded(rng.random());
    let d = draw_predictors(config, n, rng, &mut rot);
    (&d.unrotated * &d.rotation, d.rotation)
}

/// `[β_int, ([β_reg 0] P_rot)ᵀ]`.
pub fn true_coefficients(config: &SyntheticConfig, rotation: &Matrix) -> Vector {
    let p = rotation.nrows();
    let mut pre = Vector::zeros(p);
    pre.rows_mut(0, config.beta_reg.len())
        .copy_from(&Vector::from_column_slice(&config.beta_reg));
    let slopes = rotation.tr_mul(&pre);
    let mut out = Vector::zeros(p + 1);
    out[0] = config.beta_int;
    out.rows_mut(1, p).copy_from(&slopes);
    out
}

/// Spatial effect `η = L w` with `L Lᵀ = σ² exp(−D/φ)`, and iid noise
/// `ε ~ N(0, τ²)`.
pub fn generate_spatial_effects<R: Rng + ?Sized>(
    coords: &Coordinates,
    theta: &SpatialParams,
    rng: &mut R,
) -> Result<(Vector, Vector)> {
    theta.validate()?;
    let n = coords.len();
    let eta = if theta.sigma2 == 0.0 {
        Vector::zeros(n)
    } else {
        let c = exp_covariance(&distance_matrix(coords), theta.sigma2, theta.phi)?;
        let l = cholesky_factor(&c)?;
        let w = Vector::from_fn(n, |_, _| rng.sample(StandardNormal));
        l.l() * w
    };
    let sd = Float::sqrt(theta.tau2);
    let eps = Vector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    Ok((eta, eps))
}

/// Cell centres of a `side × side` grid over `[lo, hi]²`, x varying fastest.
pub fn grid_coordinates(side: usize, range: (f64, f64)) -> Coordinates {
    let (lo, hi) = range;
    let step = (hi - lo) / side as f64;
    let c = |i: usize| lo + (i as f64 + 0.5) * step;
    let mut points = Vec::with_capacity(side * side);
    for j in 0..side {
        for i in 0..side {
            points.push([c(i), c(j)]);
        }
    }
    Coordinates { points }
}

/// Full dataset, a pure function of `config`.
pub fn generate_dataset(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let coords = match config.scattered_points {
        Some(n) => {
            let mut r = rng::stream(config.seed, 3);
            let (lo, hi) = config.coord_range;
            Coordinates {
                points: (0..n)
                    .map(|_| {
                        [
                            lo + (hi - lo) * r.random::<f64>(),
                            lo + (hi - lo) * r.random::<f64>(),
                        ]
                    })
                    .collect(),
            }
        }
        None => grid_coordinates(config.grid_side, config.coord_range),
    };
    let n = coords.len();
    let mut pred_rng = rng::stream(config.seed, 0);
    let mut rot_rng = match config.rotation_seed {
        Some(s) => rng::seeded(s),
        None => rng::stream(config.seed, 1),
    };
    let d = draw_predictors(config, n, &mut pred_rng, &mut rot_rng);
    let z = &d.unrotated * &d.rotation;
    let beta_true = true_coefficients(config, &d.rotation);
    let mut eff_rng = rng::stream(config.seed, 2);
    let (eta, eps) = generate_spatial_effects(&coords, &config.theta_true, &mut eff_rng)?;
    let eta_plus_eps = eta + eps;
    let slopes = beta_true.rows(1, config.n_predictors());
    let y = (&z * slopes).add_scalar(config.beta_int) + &eta_plus_eps;
    Ok(SyntheticDataset {
        coords,
        z,
        y,
        eta_plus_eps,
        beta_true,
        theta_true: config.theta_true,
        seed: config.seed,
    })
}
