//! Metropolis update of the covariance parameters θ on the log scale, with
//! adaptive proposal covariance.
//!
//! The sampled coordinates are `u = log θ`. The target density of `u` is
//!
//! ```text
//! log p(u) = −½ rᵀ Σ_θ⁻¹ r − ½ log|Σ_θ| − ½ Σ_j ((u_j − log μ_j) / σ_j)²
//! ```
//!
//! with `r = y − Xβ`. The log-normal prior on θ is a normal prior on `u`, so
//! the Jacobian of the log transform is already absorbed in the last term and
//! a symmetric random walk on `u` needs no further correction.

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{CovarianceModel, SpatialPrior, TrainingData};
use crate::linalg::sample_mean_cov;
use crate::pca::DesignMatrix;
use crate::spatial::{
    distance_matrix, factor_for, scaled_identity_factor, Coordinates, CovFactor, SpatialParams,
};
use crate::{Error, Matrix, Result, Vector};

/// Optimal random-walk scaling constant.
pub const AM_SCALE: f64 = 2.38;
/// Diagonal floor added to adapted proposal covariances.
pub const AM_EPSILON: f64 = 1e-10;

/// Log-normal prior contribution of the active components, or `None` outside
/// the support.
pub(crate) fn log_prior(
    theta: &SpatialParams,
    prior: &SpatialPrior,
    model: CovarianceModel,
) -> Option<f64> {
    let values = [theta.tau2, theta.sigma2, theta.phi];
    let mut acc = 0.0;
    for &j in model.active() {
        let v = values[j];
        if !(v > 0.0) || !v.is_finite() {
            return None;
        }
        if prior.sigma[j].is_finite() {
            let z = Float::ln(v / prior.mu[j]) / prior.sigma[j];
            acc -= 0.5 * z * z;
        }
    }
    if model == CovarianceModel::Spatial {
        let (lo, hi) = prior.phi_bounds;
        if theta.phi < lo || theta.phi > hi {
            return None;
        }
    }
    Some(acc)
}

/// Gaussian log-likelihood kernel `−½ rᵀΣ⁻¹r − ½ log|Σ|` for a factored Σ.
pub(crate) fn log_lik(factor: &CovFactor, resid: &Vector) -> Result<f64> {
    Ok(-0.5 * factor.quad_form(resid)? - 0.5 * factor.log_det())
}

/// Conditional log posterior of θ (up to a constant) under the spatial model.
///
/// Returns [`Error::OutOfSupport`] when a component is non-positive or `φ`
/// lies outside the prior bounds.
pub fn log_posterior_theta(
    theta: &SpatialParams,
    beta: &Vector,
    x: &DesignMatrix,
    y: &Vector,
    coords: &Coordinates,
    prior: &SpatialPrior,
) -> Result<f64> {
    let prior_term =
        log_prior(theta, prior, CovarianceModel::Spatial).ok_or(Error::OutOfSupport)?;
    let factor = factor_for(&distance_matrix(coords), theta)?;
    let resid = y - &x.x * beta;
    Ok(log_lik(&factor, &resid)? + prior_term)
}

/// Conditional target for θ with the distance matrix cached.
pub(crate) struct ThetaTarget<'a> {
    pub data: &'a TrainingData,
    pub dist: Option<Matrix>,
    pub prior: SpatialPrior,
    pub model: CovarianceModel,
}

impl<'a> ThetaTarget<'a> {
    pub fn new(data: &'a TrainingData, prior: SpatialPrior, model: CovarianceModel) -> Self {
        let dist = match model {
            CovarianceModel::Spatial => Some(distance_matrix(&data.coords)),
            CovarianceModel::Nugget => None,
        };
        Self {
            data,
            dist,
            prior,
            model,
        }
    }

    pub fn dim(&self) -> usize {
        self.model.active().len()
    }

    pub fn to_log(&self, theta: &SpatialParams) -> Vector {
        let values = [theta.tau2, theta.sigma2, theta.phi];
        Vector::from_iterator(
            self.dim(),
            self.model.active().iter().map(|&j| Float::ln(values[j])),
        )
    }

    pub fn from_log(&self, u: &Vector, template: &SpatialParams) -> SpatialParams {
        let mut values = [template.tau2, template.sigma2, template.phi];
        for (k, &j) in self.model.active().iter().enumerate() {
            values[j] = Float::exp(u[k]);
        }
        SpatialParams {
            tau2: values[0],
            sigma2: values[1],
            phi: values[2],
        }
    }

    pub fn factor(&self, theta: &SpatialParams) -> Result<CovFactor> {
        match &self.dist {
            Some(d) => factor_for(d, theta),
            None => scaled_identity_factor(self.data.n(), theta.tau2),
        }
    }

    /// Log target and the factor it was computed with; `None` outside the
    /// support.
    pub fn evaluate(
        &self,
        theta: &SpatialParams,
        resid: &Vector,
    ) -> Result<Option<(f64, CovFactor)>> {
        let Some(prior_term) = log_prior(theta, &self.prior, self.model) else {
            return Ok(None);
        };
        let factor = self.factor(theta)?;
        let lp = log_lik(&factor, resid)? + prior_term;
        Ok(Some((lp, factor)))
    }

    pub fn evaluate_with(
        &self,
        theta: &SpatialParams,
        factor: &CovFactor,
        resid: &Vector,
    ) -> Result<f64> {
        let prior_term = log_prior(theta, &self.prior, self.model).ok_or(Error::OutOfSupport)?;
        Ok(log_lik(factor, resid)? + prior_term)
    }
}

/// Outcome of one Metropolis step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetropolisStep {
    pub point: Vector,
    pub log_post: f64,
    pub accepted: bool,
}

/// `min(1, exp(proposed − current))`; zero for non-finite proposals.
pub fn acceptance_probability(current_lp: f64, proposed_lp: f64) -> f64 {
    if proposed_lp.is_nan() || proposed_lp == f64::NEG_INFINITY {
        return 0.0;
    }
    let d = proposed_lp - current_lp;
    if d >= 0.0 {
        1.0
    } else {
        Float::exp(d)
    }
}

/// One random-walk Metropolis step from `current` (log coordinates) with
/// proposal `current + L z`, `z ~ N(0, I)`.
///
/// `log_post` returns the log target of a proposed point (`-∞` outside the
/// support). A rejected proposal keeps the current point.
pub fn metropolis_step<R, F>(
    current: &Vector,
    current_lp: f64,
    proposal_chol: &Matrix,
    mut log_post: F,
    rng: &mut R,
) -> MetropolisStep
where
    R: Rng + ?Sized,
    F: FnMut(&Vector) -> f64,
{
    let z = Vector::from_fn(current.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let proposal = current + proposal_chol * z;
    let lp = log_post(&proposal);
    let alpha = acceptance_probability(current_lp, lp);
    let u: f64 = rng.random();
    if u < alpha {
        MetropolisStep {
            point: proposal,
            log_post: lp,
            accepted: true,
        }
    } else {
        MetropolisStep {
            point: current.clone(),
            log_post: current_lp,
            accepted: false,
        }
    }
}

/// Proposal factor from the sampled history:
/// `chol((2.38²/d) · cov(history) + ε I)`.
///
/// Falls back to `base_scale · I` when the history is too short, has
/// (numerically) zero spread, or cannot be factored.
pub fn adapt_proposal(history: &[Vector], base_scale: f64) -> Matrix {
    let d = history.first().map_or(0, |h| h.len());
    let fallback = Matrix::identity(d, d) * base_scale;
    if history.len() < 2 || d == 0 {
        return fallback;
    }
    let (_, cov) = sample_mean_cov(history);
    if !(cov.diagonal().max() > 1e-14) || cov.iter().any(|v| !v.is_finite()) {
        return fallback;
    }
    let mut prop = cov * (AM_SCALE * AM_SCALE / d as f64);
    for i in 0..d {
        prop[(i, i)] += AM_EPSILON;
    }
    match nalgebra::Cholesky::new(prop) {
        Some(c) => c.unpack(),
        None => fallback,
    }
}
