//! Posterior predictive distributions at new locations.
//!
//! For one chain state the prediction is the kriging-corrected linear
//! predictor `x_new β + C_new Σ_θ⁻¹ (y − Xβ)`; repeating it over the retained
//! states gives draws from the predictive distribution. Optionally each draw
//! also carries the conditional (kriging) variance
//! `τ² + σ² − C_new Σ_θ⁻¹ C_newᵀ` of that state.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{Chain, ModelState, TrainingData};
use crate::spatial::{cross_covariance, distance_matrix, factor_for, Coordinates, SpatialParams};
use crate::validation::stats;
use crate::{rng, Error, Matrix, Result, Vector};

/// Minimum number of retained states required for predictive draws.
pub const MIN_RETAINED_STATES: usize = 100;

/// Summary of the predictive draws at one location.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PredictionResult {
    pub location_id: String,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

/// Design rows and coordinates of the prediction locations.
#[derive(Debug, Clone, PartialEq)]
pub struct NewLocations {
    /// `m × (p + 1)`, leading column of ones.
    pub x: Matrix,
    pub coords: Coordinates,
}

impl NewLocations {
    pub fn new(x: Matrix, coords: Coordinates) -> Result<Self> {
        if x.nrows() != coords.len() {
            return Err(Error::DimensionMismatch {
                what: "new location coordinates",
                expected: x.nrows(),
                found: coords.len(),
            });
        }
        Ok(Self { x, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

fn check_dims(p1: usize, state: &ModelState, train: &TrainingData) -> Result<()> {
    let want = train.x.x.ncols();
    if p1 != want || state.beta.len() != want {
        return Err(Error::DimensionMismatch {
            what: "design width",
            expected: want,
            found: if p1 != want { p1 } else { state.beta.len() },
        });
    }
    Ok(())
}

/// Kriging-corrected prediction for a single state and location.
pub fn predict_mean_given_state(
    x_new: &Vector,
    coord_new: [f64; 2],
    state: &ModelState,
    train: &TrainingData,
) -> Result<f64> {
    check_dims(x_new.len(), state, train)?;
    let linear = x_new.dot(&state.beta);
    if state.theta.sigma2 == 0.0 {
        return Ok(linear);
    }
    let factor = factor_for(&distance_matrix(&train.coords), &state.theta)?;
    let resid = &train.y - &train.x.x * &state.beta;
    let c_new = cross_covariance(
        &Coordinates {
            points: alloc::vec![coord_new],
        },
        &train.coords,
        state.theta.sigma2,
        state.theta.phi,
    )?;
    let weights = factor.solve(&resid)?;
    Ok(linear + (c_new * weights)[0])
}

/// Per-θ quantities for a batch of new locations: `W = L⁻¹ C_newᵀ` and the
/// conditional variances.
struct KrigingCache {
    theta: SpatialParams,
    factor: Option<crate::spatial::CovFactor>,
    w: Option<Matrix>,
    cond_var: Vec<f64>,
}

impl KrigingCache {
    fn build(
        theta: SpatialParams,
        new: &NewLocations,
        train: &TrainingData,
        dist: &Matrix,
    ) -> Result<Self> {
        let m = new.len();
        if theta.sigma2 == 0.0 {
            return Ok(Self {
                theta,
                factor: None,
                w: None,
                cond_var: alloc::vec![theta.tau2; m],
            });
        }
        let factor = factor_for(dist, &theta)?;
        let c_new = cross_covariance(&new.coords, &train.coords, theta.sigma2, theta.phi)?;
        let w = factor.whiten_mat(&c_new.transpose())?;
        let total = theta.tau2 + theta.sigma2;
        let cond_var = w
            .column_iter()
            .map(|c| (total - c.norm_squared()).max(0.0))
            .collect();
        Ok(Self {
            theta,
            factor: Some(factor),
            w: Some(w),
            cond_var,
        })
    }
}

/// Predictive draws at every new location, one per state.
///
/// Returns `draws[location][state]`. The noise draws for location `j` come
/// from the stream `(seed, j)`, so results do not depend on how locations are
/// batched. The covariance of the training locations is factored once per
/// distinct θ.
pub fn predictive_draws_batch(
    new: &NewLocations,
    states: &[ModelState],
    train: &TrainingData,
    include_noise: bool,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let m = new.len();
    let mut out: Vec<Vec<f64>> = (0..m).map(|_| Vec::with_capacity(states.len())).collect();
    if m == 0 {
        return Ok(out);
    }
    let mut rngs: Vec<rng::Rng> = (0..m as u64).map(|j| rng::stream(seed, j)).collect();
    let dist = distance_matrix(&train.coords);
    let mut cache: Option<KrigingCache> = None;
    for state in states {
        check_dims(new.x.ncols(), state, train)?;
        if cache.as_ref().map_or(true, |c| c.theta != state.theta) {
            cache = Some(KrigingCache::build(state.theta, new, train, &dist)?);
        }
        let c = cache.as_ref().expect("cache populated above");
        let mut mean = &new.x * &state.beta;
        if let (Some(factor), Some(w)) = (&c.factor, &c.w) {
            let resid = &train.y - &train.x.x * &state.beta;
            let wr = factor.whiten(&resid)?;
            mean += w.tr_mul(&wr);
        }
        for j in 0..m {
            let mut v = mean[j];
            if include_noise {
                let z: f64 = rngs[j].sample(StandardNormal);
                v += Float::sqrt(c.cond_var[j]) * z;
            }
            out[j].push(v);
        }
    }
    Ok(out)
}

/// Predictive draws at one location over the retained states of `chain`.
pub fn predictive_draws<R: Rng + ?Sized>(
    x_new: &Vector,
    coord_new: [f64; 2],
    chain: &Chain,
    train: &TrainingData,
    include_noise: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let states = chain.retained();
    if states.len() < MIN_RETAINED_STATES {
        return Err(Error::Empty("at least 100 retained states are required"));
    }
    let new = NewLocations::new(
        Matrix::from_row_slice(1, x_new.len(), x_new.as_slice()),
        Coordinates {
            points: alloc::vec![coord_new],
        },
    )?;
    let seed: u64 = rng.random();
    let mut draws = predictive_draws_batch(&new, states, train, include_noise, seed)?;
    Ok(draws.pop().unwrap_or_default())
}

/// Mean, median and equal-tailed interval of the draws.
pub fn summarize(samples: Vec<f64>, level: f64) -> Result<PredictionResult> {
    if samples.is_empty() {
        return Err(Error::Empty("predictive samples"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParam("interval level must lie in (0, 1)"));
    }
    let sorted = stats::sorted(&samples);
    let tail = (1.0 - level) / 2.0;
    Ok(PredictionResult {
        location_id: String::new(),
        mean: stats::mean(&samples),
        median: stats::quantile_sorted(&sorted, 0.5),
        ci_low: stats::quantile_sorted(&sorted, tail),
        ci_high: stats::quantile_sorted(&sorted, 1.0 - tail),
        level,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AlphaUpdate, CovarianceModel, McmcConfig, ModelOptions};
    use crate::pca::DesignMatrix;
    use alloc::vec;
    use rand::SeedableRng;

    fn train3() -> TrainingData {
        let x = Matrix::from_row_slice(3, 2, &[1.0, 0.5, 1.0, -0.3, 1.0, 1.1]);
        TrainingData::new(
            DesignMatrix::from_matrix(x).unwrap(),
            Vector::from_vec(vec![2.0, 0.4, 3.3]),
            Coordinates::new(vec![[0.0, 0.0], [0.4, 0.1], [0.2, 0.7]]).unwrap(),
        )
        .unwrap()
    }

    fn state(theta: SpatialParams) -> ModelState {
        ModelState {
            beta: Vector::from_vec(vec![1.5, 0.8]),
            alpha0: 1.0,
            alpha1: 1.0,
            theta,
        }
    }

    #[test]
    fn zero_spatial_variance_is_linear() {
        let t = train3();
        let s = state(SpatialParams::new(0.3, 0.0, 0.5).unwrap());
        let x_new = Vector::from_vec(vec![1.0, -0.7]);
        let got = predict_mean_given_state(&x_new, [0.1, 0.1], &s, &t).unwrap();
        assert!((got - (1.5 - 0.8 * 0.7)).abs() < 1e-12);
    }

    #[test]
    fn interpolates_at_training_point_with_vanishing_nugget() {
        let t = train3();
        let s = state(SpatialParams::new(1e-10, 1.0, 0.5).unwrap());
        let got = predict_mean_given_state(&t.x.row(1), t.coords.points[1], &s, &t).unwrap();
        assert!((got - t.y[1]).abs() < 1e-6);
    }

    #[test]
    fn matches_dense_inverse_oracle() {
        let t = train3();
        let theta = SpatialParams::new(0.2, 0.9, 0.35).unwrap();
        let s = state(theta);
        let x_new = Vector::from_vec(vec![1.0, 0.25]);
        let p = [0.3, 0.3];
        let got = predict_mean_given_state(&x_new, p, &s, &t).unwrap();

        let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let sigma = Matrix::from_fn(3, 3, |i, j| {
            0.9 * (-d(t.coords.points[i], t.coords.points[j]) / 0.35).exp()
                + if i == j { 0.2 } else { 0.0 }
        });
        let c = Matrix::from_fn(1, 3, |_, j| 0.9 * (-d(p, t.coords.points[j]) / 0.35).exp());
        let r = &t.y - &t.x.x * &s.beta;
        let oracle = x_new.dot(&s.beta) + (c * sigma.try_inverse().unwrap() * r)[0];
        assert!((got - oracle).abs() < 1e-10);
    }

    #[test]
    fn linear_in_response() {
        let t = train3();
        let s = state(SpatialParams::new(0.2, 0.9, 0.35).unwrap());
        let x_new = Vector::from_vec(vec![1.0, 0.25]);
        let with_y = |y: Vector| {
            let mut tt = t.clone();
            tt.y = y;
            predict_mean_given_state(&x_new, [0.3, 0.3], &s, &tt).unwrap()
        };
        let y1 = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let y2 = Vector::from_vec(vec![0.3, 0.7, 4.0]);
        // kriging term is linear in y; the x_new β part is constant
        let base = with_y(Vector::zeros(3));
        let lhs = with_y(&y1 * 2.0 + &y2 * -3.0) - base;
        let rhs = 2.0 * (with_y(y1) - base) - 3.0 * (with_y(y2) - base);
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn far_location_reduces_to_linear_prediction() {
        let t = train3();
        let states: Vec<ModelState> = (0..5)
            .map(|i| state(SpatialParams::new(0.2, 1.0 + i as f64 * 0.1, 0.1).unwrap()))
            .collect();
        let new = NewLocations::new(
            Matrix::from_row_slice(1, 2, &[1.0, 0.6]),
            Coordinates::new(vec![[100.0, 100.0]]).unwrap(),
        )
        .unwrap();
        let draws = predictive_draws_batch(&new, &states, &t, false, 1).unwrap();
        for (d, s) in draws[0].iter().zip(&states) {
            assert!((d - (s.beta[0] + 0.6 * s.beta[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_states_give_identical_draws_without_noise() {
        let t = train3();
        let states = vec![state(SpatialParams::new(0.2, 0.7, 0.3).unwrap()); 150];
        let new = NewLocations::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.6, 1.0, -0.2]),
            Coordinates::new(vec![[0.1, 0.2], [0.5, 0.5]]).unwrap(),
        )
        .unwrap();
        let off = predictive_draws_batch(&new, &states, &t, false, 2).unwrap();
        assert!(off.iter().all(|loc| loc.iter().all(|v| *v == loc[0])));
        let on = predictive_draws_batch(&new, &states, &t, true, 2).unwrap();
        assert!(stats::variance(&on[0]) > stats::variance(&off[0]));
        // batching does not change per-location streams
        let single = NewLocations::new(
            Matrix::from_row_slice(1, 2, &[1.0, 0.6]),
            Coordinates::new(vec![[0.1, 0.2]]).unwrap(),
        )
        .unwrap();
        let one = predictive_draws_batch(&single, &states, &t, true, 2).unwrap();
        assert_eq!(one[0], on[0]);
    }

    #[test]
    fn noise_adds_variance_over_a_real_chain() {
        let t = train3();
        let opts = ModelOptions {
            alpha: AlphaUpdate::Conjugate,
            covariance: CovarianceModel::Spatial,
        };
        let pr = crate::model::RegressionPriors {
            nu0: 1.0,
            nu1: 0.1,
            a0: 1.0,
            a1: 0.01,
        };
        let sp = crate::model::SpatialPrior {
            mu: [0.3, 0.3, 0.2],
            sigma: [0.25, 0.25, f64::INFINITY],
            phi_bounds: (1e-4, 0.3),
        };
        let chain = crate::model::run_mcmc(
            &t,
            &pr,
            &sp,
            &opts,
            &McmcConfig {
                n_samples: 1_200,
                burn_in: 200,
                ..Default::default()
            },
        )
        .unwrap();
        let x_new = Vector::from_vec(vec![1.0, 0.1]);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let off = predictive_draws(&x_new, [0.9, 0.9], &chain, &t, false, &mut r).unwrap();
        let on = predictive_draws(&x_new, [0.9, 0.9], &chain, &t, true, &mut r).unwrap();
        assert_eq!(off.len(), 1_000);
        assert!(stats::variance(&on) > stats::variance(&off));
    }

    #[test]
    fn short_chain_rejected() {
        let t = train3();
        let chain = Chain {
            states: vec![state(SpatialParams::new(0.2, 0.7, 0.3).unwrap()); 50],
            accepted: vec![true; 50],
            theta_accept_count: 50,
            config: McmcConfig {
                n_samples: 50,
                burn_in: 0,
                ..Default::default()
            },
            options: ModelOptions::default(),
            rng_seed: 0,
        };
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert!(predictive_draws(
            &Vector::from_vec(vec![1.0, 0.0]),
            [0.0, 0.0],
            &chain,
            &t,
            true,
            &mut r
        )
        .is_err());
    }

    #[test]
    fn summary_examples() {
        let s = summarize(vec![1.0, 2.0, 3.0], 0.5).unwrap();
        assert_eq!(s.median, 2.0);
        assert!(s.ci_low <= s.median && s.median <= s.ci_high);
        let c = summarize(vec![4.0; 10], 0.95).unwrap();
        assert_eq!((c.ci_low, c.ci_high, c.mean), (4.0, 4.0, 4.0));
        assert!(summarize(vec![], 0.9).is_err());
        assert!(summarize(vec![1.0], 1.0).is_err());
    }

    #[test]
    fn normal_quantiles() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<f64> = (0..100_000).map(|_| r.sample(StandardNormal)).collect();
        let s = summarize(draws, 0.95).unwrap();
        assert!((s.ci_low + 1.959_964).abs() < 0.03);
        assert!((s.ci_high - 1.959_964).abs() < 0.03);
    }
}
