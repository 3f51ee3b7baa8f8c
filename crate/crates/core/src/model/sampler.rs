//! The hybrid Gibbs / adaptive-Metropolis sampler.

use alloc::vec::Vec;

use num_traits::Float;

use super::conditional::{draw_gaussian, sample_alpha, sample_alpha_literal};
use super::metropolis::{adapt_proposal, metropolis_step, ThetaTarget};
use super::{
    alpha_vec, AlphaUpdate, Chain, CovarianceModel, McmcConfig, ModelOptions, ModelState,
    RegressionPriors, SpatialPrior, TrainingData,
};
use crate::rng;
use crate::spatial::{CovFactor, SpatialParams};
use crate::{Error, Matrix, Result, Vector};

/// Quantities that depend on θ only, recomputed when a proposal is accepted.
struct Whitened {
    factor: CovFactor,
    wx: Matrix,
    wy: Vector,
    gram: Matrix,
    rhs: Vector,
}

impl Whitened {
    fn new(factor: CovFactor, data: &TrainingData) -> Result<Self> {
        let wx = factor.whiten_mat(&data.x.x)?;
        let wy = factor.whiten(&data.y)?;
        let gram = wx.tr_mul(&wx);
        let rhs = wx.tr_mul(&wy);
        Ok(Self {
            factor,
            wx,
            wy,
            gram,
            rhs,
        })
    }
}

fn initial_theta(prior: &SpatialPrior, model: CovarianceModel) -> SpatialParams {
    let (lo, hi) = prior.phi_bounds;
    let phi = prior.mu[2].clamp(lo.max(f64::MIN_POSITIVE), hi);
    match model {
        CovarianceModel::Spatial => SpatialParams {
            tau2: prior.mu[0],
            sigma2: prior.mu[1],
            phi,
        },
        CovarianceModel::Nugget => SpatialParams {
            tau2: prior.mu[0],
            sigma2: 0.0,
            phi: if phi.is_finite() && phi > 0.0 {
                phi
            } else {
                1.0
            },
        },
    }
}

/// Runs the sampler for `config.n_samples` iterations.
///
/// Each iteration draws β from its Gaussian conditional, updates the
/// precisions α according to `options.alpha`, then takes one Metropolis step
/// on `log θ`. The proposal covariance is re-estimated from the whole log-θ
/// history every `adapt_interval` iterations once `adapt_start` iterations
/// have completed. β starts at zero, α at the prior means `1/a`, θ at the
/// prior medians.
pub fn run_mcmc(
    data: &TrainingData,
    priors: &RegressionPriors,
    spatial_prior: &SpatialPrior,
    options: &ModelOptions,
    config: &McmcConfig,
) -> Result<Chain> {
    config.validate()?;
    spatial_prior.validate()?;
    match options.alpha {
        AlphaUpdate::Fixed { alpha0, alpha1 } => {
            if !(alpha0 > 0.0 && alpha1 > 0.0) {
                return Err(Error::InvalidParam("fixed precisions must be positive"));
            }
        }
        _ => priors.validate()?,
    }

    let mut rng = rng::seeded(config.seed);
    let target = ThetaTarget::new(data, *spatial_prior, options.covariance);
    let p1 = data.x.x.ncols();
    let n = data.n();

    let mut theta = initial_theta(spatial_prior, options.covariance);
    let (mut alpha0, mut alpha1) = match options.alpha {
        AlphaUpdate::Fixed { alpha0, alpha1 } => (alpha0, alpha1),
        _ => (1.0 / priors.a0, 1.0 / priors.a1),
    };
    let mut cache = target
        .factor(&theta)
        .and_then(|f| Whitened::new(f, data))
        .map_err(|e| e.at_iteration(0))?;
    let mut u = target.to_log(&theta);
    let mut proposal = Matrix::identity(u.len(), u.len()) * config.initial_proposal_scale;

    let mut states = Vec::with_capacity(config.n_samples);
    let mut accepted = Vec::with_capacity(config.n_samples);
    let mut history: Vec<Vector> = Vec::with_capacity(config.n_samples);
    let mut accept_count = 0usize;

    for it in 0..config.n_samples {
        let ctx = |e: Error| e.at_iteration(it);

        // β | α, θ
        let mut precision = cache.gram.clone();
        for (i, a) in alpha_vec(alpha0, alpha1, p1).iter().enumerate() {
            precision[(i, i)] += a;
        }
        let beta = draw_gaussian(precision, &cache.rhs, &mut rng).map_err(ctx)?;

        // α | β
        match options.alpha {
            AlphaUpdate::Conjugate => {
                (alpha0, alpha1) = sample_alpha(&beta, priors, &mut rng);
            }
            AlphaUpdate::Literal => {
                let wr = &cache.wy - &cache.wx * &beta;
                let prior_ss: f64 = alpha_vec(alpha0, alpha1, p1)
                    .iter()
                    .zip(beta.iter())
                    .map(|(a, b)| a * b * b)
                    .sum();
                let ss = wr.norm_squared() + prior_ss;
                (alpha0, alpha1) = sample_alpha_literal((alpha0, alpha1), ss, n, priors, &mut rng);
            }
            AlphaUpdate::Fixed { .. } => {}
        }

        // θ | β
        let resid = &data.y - &data.x.x * &beta;
        let current_lp = target
            .evaluate_with(&theta, &cache.factor, &resid)
            .map_err(ctx)?;
        let mut pending: Option<CovFactor> = None;
        let mut failure: Option<Error> = None;
        let step = metropolis_step(
            &u,
            current_lp,
            &proposal,
            |cand| {
                let th = target.from_log(cand, &theta);
                match target.evaluate(&th, &resid) {
                    Ok(Some((lp, f))) => {
                        pending = Some(f);
                        lp
                    }
                    Ok(None) => f64::NEG_INFINITY,
                    Err(e) => {
                        failure = Some(e);
                        f64::NEG_INFINITY
                    }
                }
            },
            &mut rng,
        );
        if let Some(e) = failure {
            return Err(ctx(e));
        }
        if step.accepted {
            accept_count += 1;
            if step.point != u {
                theta = target.from_log(&step.point, &theta);
                let factor = pending.take().ok_or(Error::SingularFactor).map_err(ctx)?;
                cache = Whitened::new(factor, data).map_err(ctx)?;
                u = step.point;
            }
        }
        debug_assert!(alpha0 > 0.0 && alpha1 > 0.0 && theta.tau2 > 0.0);
        debug_assert!(beta.iter().all(|b| Float::is_finite(*b)));

        states.push(ModelState {
            beta,
            alpha0,
            alpha1,
            theta,
        });
        accepted.push(step.accepted);
        history.push(u.clone());

        let done = it + 1;
        if done >= config.adapt_start && (done - config.adapt_start) % config.adapt_interval == 0 {
            proposal = adapt_proposal(&history, config.initial_proposal_scale);
        }
    }

    Ok(Chain {
        states,
        accepted,
        theta_accept_count: accept_count,
        config: *config,
        options: *options,
        rng_seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::conditional::beta_posterior;
    use crate::model::diagnostics::{effective_sample_size, ParamSelector};
    use crate::pca::DesignMatrix;
    use crate::spatial::{scaled_identity_factor, Coordinates};
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn toy(n: usize, p: usize, seed: u64) -> TrainingData {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(n, p + 1, |_, j| {
            if j == 0 {
                1.0
            } else {
                r.sample::<f64, _>(StandardNormal)
            }
        });
        let coords: Vec<[f64; 2]> = (0..n).map(|_| [r.random(), r.random()]).collect();
        let y = Vector::from_fn(n, |i, _| {
            5.0 + (1..=p).map(|j| x[(i, j)] * j as f64 * 0.5).sum::<f64>()
                + 0.5 * r.sample::<f64, _>(StandardNormal)
        });
        TrainingData::new(
            DesignMatrix::from_matrix(x).unwrap(),
            y,
            Coordinates::new(coords).unwrap(),
        )
        .unwrap()
    }

    fn priors() -> RegressionPriors {
        RegressionPriors {
            nu0: 1.0,
            nu1: 0.1,
            a0: 6.25,
            a1: 0.01,
        }
    }

    fn sprior() -> SpatialPrior {
        SpatialPrior {
            mu: [0.2, 0.2, 0.3],
            sigma: [0.25, 0.25, f64::INFINITY],
            phi_bounds: (1e-4, 0.45),
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let d = toy(25, 3, 1);
        let cfg = McmcConfig {
            n_samples: 400,
            burn_in: 100,
            seed: 9,
            ..Default::default()
        };
        let a = run_mcmc(&d, &priors(), &sprior(), &ModelOptions::default(), &cfg).unwrap();
        let b = run_mcmc(&d, &priors(), &sprior(), &ModelOptions::default(), &cfg).unwrap();
        assert_eq!(a, b);
        let c = run_mcmc(
            &d,
            &priors(),
            &sprior(),
            &ModelOptions::default(),
            &McmcConfig { seed: 10, ..cfg },
        )
        .unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn chain_shape_and_positivity() {
        let d = toy(30, 4, 2);
        let cfg = McmcConfig {
            n_samples: 1_500,
            burn_in: 500,
            ..Default::default()
        };
        for alpha in [
            AlphaUpdate::Conjugate,
            AlphaUpdate::Literal,
            AlphaUpdate::flat(),
        ] {
            for covariance in [CovarianceModel::Spatial, CovarianceModel::Nugget] {
                let opts = ModelOptions { alpha, covariance };
                let ch = run_mcmc(&d, &priors(), &sprior(), &opts, &cfg).unwrap();
                assert_eq!(ch.len(), 1_500);
                assert_eq!(ch.retained().len(), 1_000);
                let rate = ch.acceptance_rate();
                assert!(rate > 0.0 && rate < 1.0, "{opts:?} {rate}");
                for s in &ch.states {
                    assert!(s.alpha0 > 0.0 && s.alpha1 > 0.0);
                    assert!(s.theta.tau2 > 0.0 && s.theta.phi > 0.0);
                    assert!(s.beta.iter().all(|b| b.is_finite()));
                    match covariance {
                        CovarianceModel::Spatial => {
                            assert!(s.theta.sigma2 > 0.0);
                            assert!(s.theta.phi <= 0.45 && s.theta.phi >= 1e-4);
                        }
                        CovarianceModel::Nugget => assert_eq!(s.theta.sigma2, 0.0),
                    }
                }
                if let AlphaUpdate::Fixed { alpha0, .. } = alpha {
                    assert!(ch.states.iter().all(|s| s.alpha0 == alpha0));
                }
            }
        }
    }

    #[test]
    fn no_adaptation_before_start() {
        // With a zero initial scale every proposal is the current point, so θ
        // cannot move until the first adaptation, which needs spread. θ
        // therefore stays at its initial value for the whole run.
        let d = toy(20, 2, 3);
        let cfg = McmcConfig {
            n_samples: 600,
            burn_in: 100,
            initial_proposal_scale: 0.0,
            ..Default::default()
        };
        let ch = run_mcmc(&d, &priors(), &sprior(), &ModelOptions::default(), &cfg).unwrap();
        let t0 = ch.states[0].theta;
        assert!(ch.states.iter().all(|s| s.theta == t0));
        assert_eq!(ch.theta_accept_count, 600);
    }

    #[test]
    fn pinned_nugget_matches_analytic_beta_posterior() {
        // σ² pinned near zero, τ² pinned at 0.25, α frozen: β has a fixed
        // Gaussian posterior.
        let d = toy(40, 3, 4);
        let sp = SpatialPrior {
            mu: [0.25, 1e-9, 0.1],
            sigma: [1e-4, 1e-4, f64::INFINITY],
            phi_bounds: (1e-4, 0.5),
        };
        let alpha = [0.05, 2.0, 2.0, 2.0];
        let opts = ModelOptions {
            alpha: AlphaUpdate::Fixed {
                alpha0: 0.05,
                alpha1: 2.0,
            },
            covariance: CovarianceModel::Spatial,
        };
        let cfg = McmcConfig {
            n_samples: 21_000,
            burn_in: 1_000,
            seed: 5,
            ..Default::default()
        };
        let ch = run_mcmc(&d, &priors(), &sp, &opts, &cfg).unwrap();

        let l = scaled_identity_factor(40, 0.25).unwrap();
        let (xt, yt) = crate::model::augmented_system(&d.x.x, &d.y, &l, &alpha).unwrap();
        let (mean, cov) = beta_posterior(&xt, &yt).unwrap();
        for j in 0..4 {
            let tr = ch.trace(ParamSelector::Beta(j));
            let m = tr.iter().sum::<f64>() / tr.len() as f64;
            let ess = effective_sample_size(&tr);
            let se = (cov[(j, j)] / ess).sqrt();
            assert!(
                (m - mean[j]).abs() < 4.0 * se,
                "beta_{j}: {m} vs {}",
                mean[j]
            );
        }
    }

    #[test]
    fn slope_permutation_is_exchangeable() {
        let d = toy(40, 3, 6);
        let perm = [0usize, 3, 1, 2];
        let xp = Matrix::from_fn(40, 4, |i, j| d.x.x[(i, perm[j])]);
        let dp = TrainingData::new(
            DesignMatrix::from_matrix(xp).unwrap(),
            d.y.clone(),
            d.coords.clone(),
        )
        .unwrap();
        let opts = ModelOptions {
            alpha: AlphaUpdate::Conjugate,
            covariance: CovarianceModel::Nugget,
        };
        let sp = crate::model::nugget_prior(d.y.as_slice());
        let cfg = McmcConfig {
            n_samples: 20_000,
            burn_in: 1_000,
            seed: 7,
            ..Default::default()
        };
        let a = run_mcmc(&d, &priors(), &sp, &opts, &cfg).unwrap();
        let b = run_mcmc(&dp, &priors(), &sp, &opts, &McmcConfig { seed: 8, ..cfg }).unwrap();
        let stat = |ch: &Chain, sel| {
            let t = ch.trace(sel);
            let m = t.iter().sum::<f64>() / t.len() as f64;
            let v = t.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / t.len() as f64;
            (m, (v / effective_sample_size(&t)).sqrt())
        };
        for j in 0..4 {
            let (ma, sa) = stat(&a, ParamSelector::Beta(perm[j]));
            let (mb, sb) = stat(&b, ParamSelector::Beta(j));
            assert!(
                (ma - mb).abs() < 4.0 * (sa * sa + sb * sb).sqrt(),
                "slot {j}: {ma} vs {mb}"
            );
        }
        let (ma, sa) = stat(&a, ParamSelector::Alpha1);
        let (mb, sb) = stat(&b, ParamSelector::Alpha1);
        assert!((ma - mb).abs() < 4.0 * (sa * sa + sb * sb).sqrt());
    }

    #[test]
    fn rejects_invalid_configuration() {
        let d = toy(10, 1, 9);
        let bad = McmcConfig {
            n_samples: 10,
            burn_in: 20,
            ..Default::default()
        };
        assert!(matches!(
            run_mcmc(&d, &priors(), &sprior(), &ModelOptions::default(), &bad),
            Err(Error::InvalidConfig(_))
        ));
        let bad_prior = SpatialPrior {
            phi_bounds: (1.0, 0.5),
            ..sprior()
        };
        assert!(run_mcmc(
            &d,
            &priors(),
            &bad_prior,
            &ModelOptions::default(),
            &McmcConfig::default()
        )
        .is_err());
    }
}
