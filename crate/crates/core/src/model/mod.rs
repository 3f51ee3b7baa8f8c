//! The hierarchical regression model and its hybrid sampler.
//!
//! ```text
//! y = Xβ + η + ε,   η ~ N(0, C_θ),   ε ~ N(0, τ² I)
//! β_i ~ N(0, 1/α_i),   α = [α0, α1, …, α1]
//! α_g ~ χ²(ν_g, a_g) = Γ(shape ν_g/2, rate ν_g a_g/2)
//! θ_j ~ logN(log μ_j, σ_j²)   (σ_j = ∞: flat in log θ_j)
//! ```
//!
//! β and α are drawn from their conditionals (Gibbs); θ = (τ², σ², φ) is
//! updated by an adaptive random-walk Metropolis step on `log θ`.

pub mod conditional;
pub mod diagnostics;
pub mod metropolis;
pub mod sampler;

use alloc::vec::Vec;

use crate::pca::DesignMatrix;
use crate::spatial::{Coordinates, SpatialParams};
use crate::{Error, Result, Vector};

pub use conditional::{augmented_system, sample_alpha, sample_alpha_literal, sample_beta};
pub use diagnostics::{effective_sample_size, ParamSelector};
pub use metropolis::{adapt_proposal, log_posterior_theta, metropolis_step, MetropolisStep};
pub use sampler::run_mcmc;

/// Hyperparameters of the scaled-χ² priors on the two precision groups.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegressionPriors {
    pub nu0: f64,
    pub nu1: f64,
    pub a0: f64,
    pub a1: f64,
}

impl RegressionPriors {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.nu0, self.nu1, self.a0, self.a1]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(
                "regression priors must be finite and positive",
            ))
        }
    }
}

/// Log-normal priors on `(τ², σ², φ)` and the admissible range of `φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpatialPrior {
    /// Prior medians, natural units.
    pub mu: [f64; 3],
    /// Log-scale standard deviations; `f64::INFINITY` means flat in log.
    #[cfg_attr(feature = "serde", serde(with = "serde_sd"))]
    pub sigma: [f64; 3],
    /// `null` upper bound in serialized form means unbounded.
    #[cfg_attr(feature = "serde", serde(with = "serde_bounds"))]
    pub phi_bounds: (f64, f64),
}

impl SpatialPrior {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.iter().all(|m| m.is_finite() && *m > 0.0) {
            return Err(Error::InvalidParam("prior medians must be positive"));
        }
        if !self.sigma.iter().all(|s| *s > 0.0) {
            return Err(Error::InvalidParam("prior log-sds must be positive"));
        }
        let (lo, hi) = self.phi_bounds;
        if !(lo >= 0.0 && lo < hi) {
            return Err(Error::InvalidParam(
                "phi bounds must satisfy 0 <= lower < upper",
            ));
        }
        Ok(())
    }
}

/// `serde_json` has no infinity; store it as `null`.
#[cfg(feature = "serde")]
mod serde_sd {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; 3], s: S) -> Result<S::Ok, S::Error> {
        let o: [Option<f64>; 3] = v.map(|x| if x.is_finite() { Some(x) } else { None });
        o.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 3], D::Error> {
        let o = <[Option<f64>; 3]>::deserialize(d)?;
        Ok(o.map(|x| x.unwrap_or(f64::INFINITY)))
    }
}

#[cfg(feature = "serde")]
mod serde_bounds {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &(f64, f64), s: S) -> Result<S::Ok, S::Error> {
        (v.0, v.1.is_finite().then_some(v.1)).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(f64, f64), D::Error> {
        let (lo, hi) = <(f64, Option<f64>)>::deserialize(d)?;
        Ok((lo, hi.unwrap_or(f64::INFINITY)))
    }
}

/// One state of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub beta: Vector,
    pub alpha0: f64,
    pub alpha1: f64,
    pub theta: SpatialParams,
}

impl ModelState {
    /// Precision vector `[α0, α1, …, α1]` of length `p + 1`.
    pub fn alpha_vec(&self) -> Vec<f64> {
        alpha_vec(self.alpha0, self.alpha1, self.beta.len())
    }
}

pub(crate) fn alpha_vec(alpha0: f64, alpha1: f64, len: usize) -> Vec<f64> {
    let mut v = alloc::vec![alpha1; len];
    if let Some(first) = v.first_mut() {
        *first = alpha0;
    }
    v
}

/// How the precisions α are treated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AlphaUpdate {
    /// Group-wise conjugate update driven by `Σ β²` of the group.
    #[default]
    Conjugate,
    /// The update with data size and augmented sum of squares, kept for comparison.
    Literal,
    /// Precisions frozen; the α step is skipped.
    Fixed { alpha0: f64, alpha1: f64 },
}

/// Precision used for the flat-prior (uninformative β) variants.
pub const FLAT_ALPHA: f64 = 1e-8;

impl AlphaUpdate {
    /// Frozen near-zero precisions: effectively a flat prior on β.
    pub fn flat() -> Self {
        AlphaUpdate::Fixed {
            alpha0: FLAT_ALPHA,
            alpha1: FLAT_ALPHA,
        }
    }
}

/// Residual covariance structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CovarianceModel {
    /// `σ² exp(−d/φ) + τ² I`, all three parameters sampled.
    #[default]
    Spatial,
    /// `τ² I` only; `σ² = 0` and `φ` is unused.
    Nugget,
}

impl CovarianceModel {
    /// Indices of the sampled components of `(τ², σ², φ)`.
    pub fn active(self) -> &'static [usize] {
        match self {
            CovarianceModel::Spatial => &[0, 1, 2],
            CovarianceModel::Nugget => &[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelOptions {
    pub alpha: AlphaUpdate,
    pub covariance: CovarianceModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct McmcConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub adapt_start: usize,
    pub adapt_interval: usize,
    pub initial_proposal_scale: f64,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_samples: 5_000,
            burn_in: 1_000,
            adapt_start: 200,
            adapt_interval: 50,
            initial_proposal_scale: 0.1,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_samples {
            return Err(Error::InvalidConfig(alloc::string::String::from(
                "burn_in must be smaller than n_samples",
            )));
        }
        if self.adapt_start < 10 {
            return Err(Error::InvalidConfig(alloc::string::String::from(
                "adapt_start must be at least 10",
            )));
        }
        if self.adapt_interval == 0 {
            return Err(Error::InvalidConfig(alloc::string::String::from(
                "adapt_interval must be positive",
            )));
        }
        if !(self.initial_proposal_scale >= 0.0 && self.initial_proposal_scale.is_finite()) {
            return Err(Error::InvalidConfig(alloc::string::String::from(
                "initial_proposal_scale must be non-negative",
            )));
        }
        Ok(())
    }
}

/// Training observations in principal-component coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub x: DesignMatrix,
    pub y: Vector,
    pub coords: Coordinates,
}

impl TrainingData {
    pub fn new(x: DesignMatrix, y: Vector, coords: Coordinates) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "response length",
                expected: n,
                found: y.len(),
            });
        }
        if coords.len() != n {
            return Err(Error::DimensionMismatch {
                what: "coordinate count",
                expected: n,
                found: coords.len(),
            });
        }
        if n == 0 {
            return Err(Error::Empty("training set"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("response must be finite"));
        }
        Ok(Self { x, y, coords })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Output of [`run_mcmc`].
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub states: Vec<ModelState>,
    /// Whether the θ proposal of each iteration was accepted.
    pub accepted: Vec<bool>,
    pub theta_accept_count: usize,
    pub config: McmcConfig,
    pub options: ModelOptions,
    pub rng_seed: u64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn burn_in(&self) -> usize {
        self.config.burn_in.min(self.states.len())
    }

    /// States after the burn-in segment.
    pub fn retained(&self) -> &[ModelState] {
        &self.states[self.burn_in()..]
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            0.0
        } else {
            self.theta_accept_count as f64 / self.accepted.len() as f64
        }
    }

    pub fn retained_acceptance_rate(&self) -> f64 {
        let tail = &self.accepted[self.burn_in()..];
        if tail.is_empty() {
            0.0
        } else {
            tail.iter().filter(|a| **a).count() as f64 / tail.len() as f64
        }
    }

    /// Values of one parameter over the retained states.
    pub fn trace(&self, sel: ParamSelector) -> Vec<f64> {
        self.retained().iter().map(|s| sel.get(s)).collect()
    }

    /// Posterior mean of `τ²` over retained states.
    pub fn mean_tau2(&self) -> f64 {
        crate::validation::stats::mean(&self.trace(ParamSelector::Tau2))
    }
}

/// Defaults: `ν0 = 1`, `ν1 = 0.1`, `a0 = (ȳ/2)²`, `a1 = 0.1²`,
/// `μ_θ = [s²/2, s²/2, d_max/3]`, `σ_θ = [0.25, 0.25, ∞]`,
/// `φ ∈ [1e-4 d_max, d_max/3]`, where `s²` is the residual variance of the
/// non-spatial Bayesian fit and `d_max` the diameter of the study area.
pub fn default_priors(
    y_train: &[f64],
    area: &Coordinates,
    pcr_residual_variance: f64,
) -> Result<(RegressionPriors, SpatialPrior)> {
    let regression = default_regression_priors(y_train)?;
    if !(pcr_residual_variance > 0.0 && pcr_residual_variance.is_finite()) {
        return Err(Error::InvalidParam("residual variance must be positive"));
    }
    let d_max = area.max_distance();
    if !(d_max > 0.0) {
        return Err(Error::InvalidParam(
            "study area needs two distinct locations",
        ));
    }
    let spatial = SpatialPrior {
        mu: [
            pcr_residual_variance / 2.0,
            pcr_residual_variance / 2.0,
            d_max / 3.0,
        ],
        sigma: [0.25, 0.25, f64::INFINITY],
        phi_bounds: (1e-4 * d_max, d_max / 3.0),
    };
    Ok((regression, spatial))
}

/// `ν0 = 1`, `ν1 = 0.1`, `a0 = (ȳ/2)²`, `a1 = 0.1²`.
pub fn default_regression_priors(y_train: &[f64]) -> Result<RegressionPriors> {
    if y_train.is_empty() {
        return Err(Error::Empty("training response"));
    }
    let ybar = y_train.iter().sum::<f64>() / y_train.len() as f64;
    let a0 = (ybar / 2.0) * (ybar / 2.0);
    Ok(RegressionPriors {
        nu0: 1.0,
        nu1: 0.1,
        a0: if a0 > 0.0 { a0 } else { f64::MIN_POSITIVE },
        a1: 0.1 * 0.1,
    })
}

/// Prior on `τ²` for the non-spatial model: flat in `log τ²`, centred (for
/// initialization) on the sample variance of the response.
pub fn nugget_prior(y_train: &[f64]) -> SpatialPrior {
    let v = crate::validation::stats::variance(y_train);
    let v = if v > 0.0 && v.is_finite() { v } else { 1.0 };
    SpatialPrior {
        mu: [v, v, 1.0],
        sigma: [f64::INFINITY; 3],
        phi_bounds: (0.0, f64::INFINITY),
    }
}
