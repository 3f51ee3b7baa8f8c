//! Gibbs conditionals for β and α.

use nalgebra::Cholesky;
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::RegressionPriors;
use crate::spatial::CovFactor;
use crate::{Error, Matrix, Result, Vector};

/// Whitened and prior-augmented regression system.
///
/// `x̃ = [L⁻¹X ; diag(√α)]`, `ỹ = [L⁻¹y ; 0]`, so that
/// `x̃ᵀx̃ = XᵀΣ⁻¹X + diag(α)` and `x̃ᵀỹ = XᵀΣ⁻¹y`.
pub fn augmented_system(
    x: &Matrix,
    y: &Vector,
    chol: &CovFactor,
    alpha: &[f64],
) -> Result<(Matrix, Vector)> {
    let (n, p) = x.shape();
    if y.len() != n || chol.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "augmented system rows",
            expected: n,
            found: if y.len() != n { y.len() } else { chol.dim() },
        });
    }
    if alpha.len() != p {
        return Err(Error::DimensionMismatch {
            what: "precision vector",
            expected: p,
            found: alpha.len(),
        });
    }
    if alpha.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::InvalidParam("precisions must be positive"));
    }
    let top = chol.whiten_mat(x)?;
    let ytop = chol.whiten(y)?;
    let mut xt = Matrix::zeros(n + p, p);
    xt.rows_mut(0, n).copy_from(&top);
    for (i, a) in alpha.iter().enumerate() {
        xt[(n + i, i)] = Float::sqrt(*a);
    }
    let mut yt = Vector::zeros(n + p);
    yt.rows_mut(0, n).copy_from(&ytop);
    Ok((xt, yt))
}

/// Draws β ~ N(β̂, Σ̂) with `β̂ = (x̃ᵀx̃)⁻¹x̃ᵀỹ` and `Σ̂ = (x̃ᵀx̃)⁻¹`.
pub fn sample_beta<R: Rng + ?Sized>(
    x_tilde: &Matrix,
    y_tilde: &Vector,
    rng: &mut R,
) -> Result<Vector> {
    if x_tilde.nrows() != y_tilde.len() {
        return Err(Error::DimensionMismatch {
            what: "augmented response",
            expected: x_tilde.nrows(),
            found: y_tilde.len(),
        });
    }
    let precision = x_tilde.tr_mul(x_tilde);
    let rhs = x_tilde.tr_mul(y_tilde);
    draw_gaussian(precision, &rhs, rng)
}

/// Draws from `N(P⁻¹ b, P⁻¹)` given the precision `P` and `b`.
///
/// With `P = R Rᵀ`, the draw is `P⁻¹b + R⁻ᵀ z`.
pub(crate) fn draw_gaussian<R: Rng + ?Sized>(
    precision: Matrix,
    rhs: &Vector,
    rng: &mut R,
) -> Result<Vector> {
    let chol = Cholesky::new(precision).ok_or(Error::SingularFactor)?;
    let mean = chol.solve(rhs);
    let z = Vector::from_fn(rhs.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = chol
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .ok_or(Error::SingularFactor)?;
    Ok(mean + noise)
}

/// Posterior mean and covariance of β for a fixed augmented system.
pub fn beta_posterior(x_tilde: &Matrix, y_tilde: &Vector) -> Result<(Vector, Matrix)> {
    let chol = Cholesky::new(x_tilde.tr_mul(x_tilde)).ok_or(Error::SingularFactor)?;
    Ok((chol.solve(&x_tilde.tr_mul(y_tilde)), chol.inverse()))
}

/// Draws from `Γ(shape, rate)`.
pub(crate) fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    // Parameters are validated by construction: shape > 0, rate > 0.
    let g = Gamma::new(shape, 1.0 / rate).expect("gamma parameters are positive");
    g.sample(rng).max(f64::MIN_POSITIVE)
}

/// Conjugate update of the scaled-χ² prior `χ²(ν, a) = Γ(ν/2, rate νa/2)`
/// after observing `k` coefficients with sum of squares `ss`:
/// `Γ((ν + k)/2, rate (νa + ss)/2)`.
pub fn group_posterior(nu: f64, a: f64, k: usize, ss: f64) -> (f64, f64) {
    ((nu + k as f64) / 2.0, (nu * a + ss) / 2.0)
}

/// Draws `(α0, α1)` from their group-wise conjugate conditionals: α0 given
/// the intercept alone, α1 given the remaining coefficients.
pub fn sample_alpha<R: Rng + ?Sized>(
    beta: &Vector,
    priors: &RegressionPriors,
    rng: &mut R,
) -> (f64, f64) {
    let b0 = beta.as_slice().first().copied().unwrap_or(0.0);
    let (s0, r0) = group_posterior(priors.nu0, priors.a0, 1, b0 * b0);
    let alpha0 = gamma_draw(s0, r0, rng);
    let k = beta.len().saturating_sub(1);
    let ss: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    let (s1, r1) = group_posterior(priors.nu1, priors.a1, k, ss);
    let alpha1 = gamma_draw(s1, r1, rng);
    (alpha0, alpha1)
}

/// The alternative update `α ~ χ²(n + ν, (ν/α_prev + SS_β)/(n + ν))`, i.e.
/// `Γ((n + ν)/2, rate (ν/α_prev + SS_β)/2)`, with `SS_β` the augmented
/// residual sum of squares and `n` the number of observations.
pub fn sample_alpha_literal<R: Rng + ?Sized>(
    alpha_prev: (f64, f64),
    ss_beta: f64,
    n: usize,
    priors: &RegressionPriors,
    rng: &mut R,
) -> (f64, f64) {
    let draw = |nu: f64, prev: f64, rng: &mut R| {
        gamma_draw((n as f64 + nu) / 2.0, (nu / prev + ss_beta) / 2.0, rng)
    };
    let a0 = draw(priors.nu0, alpha_prev.0, rng);
    let a1 = draw(priors.nu1, alpha_prev.1, rng);
    (a0, a1)
}
