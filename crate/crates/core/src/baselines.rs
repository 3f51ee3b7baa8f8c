//! Comparison models: least-squares PCR, its spatial flat-prior variant,
//! truncated and adaptively truncated versions, and a single dispatch over
//! all model kinds including the Bayesian ones.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{
    default_priors, default_regression_priors, nugget_prior, run_mcmc, AlphaUpdate, Chain,
    CovarianceModel, McmcConfig, ModelOptions, RegressionPriors, SpatialPrior, TrainingData,
};
use crate::pca::DesignMatrix;
use crate::predict::{
    predictive_draws_batch, summarize, NewLocations, PredictionResult, MIN_RETAINED_STATES,
};
use crate::spatial::Coordinates;
use crate::{rng, Error, Matrix, Result, Vector};

/// Relative threshold on `|R_ii|` below which a least-squares system is
/// treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ModelKind {
    Pcr,
    PcrSpatial,
    PcrK,
    PcrKSpatial,
    PcrAdaptive,
    PcrAdaptiveSpatial,
    Bpcr,
    BpcrSpatial,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Pcr,
        ModelKind::PcrSpatial,
        ModelKind::PcrK,
        ModelKind::PcrKSpatial,
        ModelKind::PcrAdaptive,
        ModelKind::PcrAdaptiveSpatial,
        ModelKind::Bpcr,
        ModelKind::BpcrSpatial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pcr => "pcr",
            ModelKind::PcrSpatial => "pcr_spatial",
            ModelKind::PcrK => "pcr_k",
            ModelKind::PcrKSpatial => "pcr_k_spatial",
            ModelKind::PcrAdaptive => "pcr_adaptive",
            ModelKind::PcrAdaptiveSpatial => "pcr_adaptive_spatial",
            ModelKind::Bpcr => "bpcr",
            ModelKind::BpcrSpatial => "bpcr_spatial",
        }
    }

    pub fn is_spatial(self) -> bool {
        matches!(
            self,
            ModelKind::PcrSpatial
                | ModelKind::PcrKSpatial
                | ModelKind::PcrAdaptiveSpatial
                | ModelKind::BpcrSpatial
        )
    }

    pub fn needs_k(self) -> bool {
        matches!(self, ModelKind::PcrK | ModelKind::PcrKSpatial)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown model kind `{s}`")))
    }
}

/// A model kind with its component count where one is required.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct BaselineSpec {
    pub kind: ModelKind,
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub k: Option<usize>,
}

impl BaselineSpec {
    pub fn new(kind: ModelKind, k: Option<usize>) -> Result<Self> {
        let spec = Self { kind, k };
        spec.validate(None)?;
        Ok(spec)
    }

    pub fn of(kind: ModelKind) -> Self {
        Self { kind, k: None }
    }

    /// Checks that `k` is given exactly for the fixed-k kinds and, when
    /// `p_kept` is known, that `1 ≤ k ≤ p_kept`.
    pub fn validate(&self, p_kept: Option<usize>) -> Result<()> {
        match (self.kind.needs_k(), self.k) {
            (true, None) => Err(Error::InvalidConfig(alloc::format!(
                "model `{}` needs k",
                self.kind
            ))),
            (false, Some(_)) => Err(Error::InvalidConfig(alloc::format!(
                "model `{}` takes no k",
                self.kind
            ))),
            (true, Some(k)) if k == 0 || p_kept.is_some_and(|p| k > p) => {
                Err(Error::InvalidConfig(alloc::format!("k = {k} out of range")))
            }
            _ => Ok(()),
        }
    }

    /// Label such as `pcr_k5`.
    pub fn label(&self) -> String {
        match self.k {
            Some(k) => alloc::format!("{}{}", self.kind, k),
            None => String::from(self.kind.name()),
        }
    }
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Least-squares solution on the intercept and first `k` components.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Full-width coefficients; entries beyond `k + 1` are zero.
    pub beta: Vector,
    pub k: usize,
    /// Upper-triangular factor of the truncated design.
    pub r: Matrix,
    pub rss: f64,
    pub n: usize,
}

impl OlsFit {
    /// Unbiased residual variance; the raw mean square when there are no
    /// residual degrees of freedom.
    pub fn residual_variance(&self) -> f64 {
        let dof = self.n.saturating_sub(self.k + 1);
        self.rss / dof.max(1) as f64
    }

    pub fn rmse(&self) -> f64 {
        Float::sqrt(self.rss / self.n as f64)
    }

    /// `x (XᵀX)⁻¹ xᵀ` for a full-width design row.
    pub fn leverage(&self, x_new: &Vector) -> Result<f64> {
        let xk = x_new.rows(0, self.k + 1).into_owned();
        let w = self
            .r
            .tr_solve_upper_triangular(&xk)
            .ok_or(Error::SingularFactor)?;
        Ok(w.norm_squared())
    }
}

fn qr_fit(xk: &Matrix, y: &Vector) -> Result<(Vector, Matrix)> {
    let qr = xk.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(diag_max > 0.0) || r.diagonal().iter().any(|v| v.abs() <= RANK_TOL * diag_max) {
        return Err(Error::RankDeficient);
    }
    let qty = qr.q().tr_mul(y);
    let b = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient)?;
    Ok((b, r))
}

/// Ordinary least squares on the intercept and the first `k` components.
pub fn fit_ols(x: &DesignMatrix, y: &Vector, k: usize) -> Result<OlsFit> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "response length",
            expected: n,
            found: y.len(),
        });
    }
    if k > x.p() {
        return Err(Error::InvalidParam("k exceeds the number of components"));
    }
    if n <= k + 1 {
        return Err(Error::RankDeficient);
    }
    let xk = x.x.columns(0, k + 1).into_owned();
    let (b, r) = qr_fit(&xk, y)?;
    let rss = (y - &xk * &b).norm_squared();
    let mut beta = Vector::zeros(x.x.ncols());
    beta.rows_mut(0, k + 1).copy_from(&b);
    Ok(OlsFit { beta, k, r, rss, n })
}

/// Leave-one-out RMSE of the least-squares fit, from the hat-matrix
/// shortcut `e_i / (1 − h_ii)`.
pub fn loo_rmse(x: &DesignMatrix, y: &Vector, k: usize) -> Result<f64> {
    let fit = fit_ols(x, y, k)?;
    let xk = x.x.columns(0, k + 1);
    let mut ss = 0.0;
    for i in 0..x.nrows() {
        let row = x.row(i);
        let h = fit.leverage(&row)?;
        if h >= 1.0 - 1e-12 {
            return Err(Error::RankDeficient);
        }
        let e = y[i] - xk.row(i).dot(&fit.beta.rows(0, k + 1).transpose());
        ss += (e / (1.0 - h)) * (e / (1.0 - h));
    }
    Ok(Float::sqrt(ss / x.nrows() as f64))
}

/// How the adaptive rule scores each candidate `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AdaptiveMode {
    /// Training-set RMSE.
    #[default]
    InSample,
    /// Leave-one-out RMSE within the training set.
    Loo,
}

pub const DEFAULT_ADAPTIVE_TOLERANCE: f64 = 0.05;

/// Predictive draws per location for the least-squares kinds.
pub const OLS_DRAWS: usize = 4_000;

/// Smallest `k` whose RMSE is within `(1 + tolerance)` of the best over
/// `k = 1..=p`. Candidates that cannot be fitted are skipped.
pub fn select_k_adaptive(
    x: &DesignMatrix,
    y: &Vector,
    tolerance: f64,
    mode: AdaptiveMode,
) -> Result<usize> {
    if x.nrows() <= 2 {
        return Err(Error::InvalidParam("adaptive selection needs n > 2"));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::InvalidParam("tolerance must be non-negative"));
    }
    let scores: Vec<(usize, f64)> = (1..=x.p())
        .filter_map(|k| {
            let s = match mode {
                AdaptiveMode::InSample => fit_ols(x, y, k).map(|f| f.rmse()),
                AdaptiveMode::Loo => loo_rmse(x, y, k),
            };
            s.ok().map(|s| (k, s))
        })
        .collect();
    let best = scores.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
    scores
        .iter()
        .find(|(_, s)| *s <= (1.0 + tolerance) * best)
        .map(|(k, _)| *k)
        .ok_or(Error::RankDeficient)
}

/// Spatial model with a flat prior on β, using the intercept and the first
/// `k` components.
pub fn fit_spatial_flat(
    x: &DesignMatrix,
    y: &Vector,
    coords: &Coordinates,
    k: usize,
    spatial_prior: &SpatialPrior,
    config: &McmcConfig,
) -> Result<Chain> {
    if k > x.p() {
        return Err(Error::InvalidParam("k exceeds the number of components"));
    }
    let data = TrainingData::new(x.truncated(k), y.clone(), coords.clone())?;
    let priors = default_regression_priors(y.as_slice())?;
    let options = ModelOptions {
        alpha: AlphaUpdate::flat(),
        covariance: CovarianceModel::Spatial,
    };
    run_mcmc(&data, &priors, spatial_prior, &options, config)
}

/// Settings shared by every model fit.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct FitSettings {
    pub mcmc: McmcConfig,
    /// α treatment for the Bayesian kinds.
    pub alpha_update: AlphaUpdate,
    pub adaptive_tolerance: f64,
    pub adaptive_mode: AdaptiveMode,
    /// Replaces the data-driven defaults for the precision priors.
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub regression_priors: Option<RegressionPriors>,
    /// Replaces the data-driven spatial prior of the spatial kinds.
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub spatial_prior: Option<SpatialPrior>,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            mcmc: McmcConfig::default(),
            alpha_update: AlphaUpdate::Conjugate,
            adaptive_tolerance: DEFAULT_ADAPTIVE_TOLERANCE,
            adaptive_mode: AdaptiveMode::InSample,
            regression_priors: None,
            spatial_prior: None,
        }
    }
}

/// A fitted model ready to predict.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Ols {
        spec: BaselineSpec,
        fit: OlsFit,
    },
    Bayes {
        spec: BaselineSpec,
        k: usize,
        chain: Chain,
        train: TrainingData,
        spatial_prior: SpatialPrior,
    },
}

impl FittedModel {
    pub fn spec(&self) -> BaselineSpec {
        match self {
            FittedModel::Ols { spec, .. } | FittedModel::Bayes { spec, .. } => *spec,
        }
    }

    /// Number of components used, excluding the intercept.
    pub fn k(&self) -> usize {
        match self {
            FittedModel::Ols { fit, .. } => fit.k,
            FittedModel::Bayes { k, .. } => *k,
        }
    }

    pub fn chain(&self) -> Option<&Chain> {
        match self {
            FittedModel::Bayes { chain, .. } => Some(chain),
            FittedModel::Ols { .. } => None,
        }
    }

    /// Predictive summaries at new locations. `x_new` has the full design
    /// width; extra columns are ignored. Location `j`'s draws come from the
    /// stream `(seed, j)`.
    pub fn predict(
        &self,
        x_new: &Matrix,
        coords_new: &Coordinates,
        include_noise: bool,
        level: f64,
        seed: u64,
    ) -> Result<Vec<PredictionResult>> {
        let k = self.k();
        if x_new.ncols() < k + 1 {
            return Err(Error::DimensionMismatch {
                what: "new design width",
                expected: k + 1,
                found: x_new.ncols(),
            });
        }
        let xk = x_new.columns(0, k + 1).into_owned();
        let draws = match self {
            FittedModel::Ols { fit, .. } => ols_draws(fit, &xk, include_noise, seed)?,
            FittedModel::Bayes { chain, train, .. } => {
                let states = chain.retained();
                if states.len() < MIN_RETAINED_STATES {
                    return Err(Error::Empty("at least 100 retained states are required"));
                }
                let new = NewLocations::new(xk, coords_new.clone())?;
                predictive_draws_batch(&new, states, train, include_noise, seed)?
            }
        };
        if draws.len() != coords_new.len() {
            return Err(Error::DimensionMismatch {
                what: "new location coordinates",
                expected: draws.len(),
                found: coords_new.len(),
            });
        }
        draws.into_iter().map(|d| summarize(d, level)).collect()
    }
}

fn ols_draws(fit: &OlsFit, xk: &Matrix, include_noise: bool, seed: u64) -> Result<Vec<Vec<f64>>> {
    let s2 = fit.residual_variance();
    let beta = fit.beta.rows(0, fit.k + 1).into_owned();
    (0..xk.nrows())
        .map(|j| {
            let row = xk.row(j).transpose();
            let mean = row.dot(&beta);
            let mut full = Vector::zeros(fit.beta.len());
            full.rows_mut(0, fit.k + 1).copy_from(&row);
            let lev = fit.leverage(&full)?;
            let var = s2 * (lev + if include_noise { 1.0 } else { 0.0 });
            let sd = Float::sqrt(var);
            let mut r = rng::stream(seed, j as u64);
            Ok((0..OLS_DRAWS)
                .map(|_| mean + sd * r.sample::<f64, _>(StandardNormal))
                .collect())
        })
        .collect()
}

/// Inputs of one fit: the training rows of the full design and the study
/// area used for the distance-based prior defaults.
#[derive(Debug, Clone, Copy)]
pub struct FitInput<'a> {
    pub x: &'a DesignMatrix,
    pub y: &'a Vector,
    pub coords: &'a Coordinates,
    pub area: &'a Coordinates,
}

/// Fits any model kind.
///
/// The spatial kinds use the default priors of [`default_priors`] with the
/// residual variance taken from the matching non-spatial fit: the
/// least-squares residual variance for the flat-prior kinds, the posterior
/// mean of `τ²` of a preliminary non-spatial Bayesian fit for `bpcr_spatial`.
pub fn fit_model(
    spec: &BaselineSpec,
    input: FitInput<'_>,
    settings: &FitSettings,
) -> Result<FittedModel> {
    let p = input.x.p();
    spec.validate(Some(p))?;
    let y = input.y;
    let k = match spec.kind {
        ModelKind::PcrK | ModelKind::PcrKSpatial => spec.k.unwrap_or(p),
        ModelKind::PcrAdaptive | ModelKind::PcrAdaptiveSpatial => select_k_adaptive(
            input.x,
            y,
            settings.adaptive_tolerance,
            settings.adaptive_mode,
        )?,
        _ => p,
    };
    match spec.kind {
        ModelKind::Pcr | ModelKind::PcrK | ModelKind::PcrAdaptive => Ok(FittedModel::Ols {
            spec: *spec,
            fit: fit_ols(input.x, y, k)?,
        }),
        ModelKind::PcrSpatial | ModelKind::PcrKSpatial | ModelKind::PcrAdaptiveSpatial => {
            let sp = match settings.spatial_prior {
                Some(sp) => sp,
                None => {
                    let s2 = fit_ols(input.x, y, k)?.residual_variance();
                    default_priors(y.as_slice(), input.area, positive_or(s2, y))?.1
                }
            };
            let chain = fit_spatial_flat(input.x, y, input.coords, k, &sp, &settings.mcmc)?;
            Ok(FittedModel::Bayes {
                spec: *spec,
                k,
                chain,
                train: TrainingData::new(input.x.truncated(k), y.clone(), input.coords.clone())?,
                spatial_prior: sp,
            })
        }
        ModelKind::Bpcr | ModelKind::BpcrSpatial => {
            let train = TrainingData::new(input.x.clone(), y.clone(), input.coords.clone())?;
            let priors = match settings.regression_priors {
                Some(p) => p,
                None => default_regression_priors(y.as_slice())?,
            };
            let nugget = nugget_prior(y.as_slice());
            let nonspatial = ModelOptions {
                alpha: settings.alpha_update,
                covariance: CovarianceModel::Nugget,
            };
            let (chain, sp) = if spec.kind == ModelKind::Bpcr {
                (
                    run_mcmc(&train, &priors, &nugget, &nonspatial, &settings.mcmc)?,
                    nugget,
                )
            } else {
                let sp = match settings.spatial_prior {
                    Some(sp) => sp,
                    None => {
                        let pre_cfg = McmcConfig {
                            seed: rng::derive_seed(settings.mcmc.seed, 1),
                            ..settings.mcmc
                        };
                        let pre = run_mcmc(&train, &priors, &nugget, &nonspatial, &pre_cfg)?;
                        default_priors(y.as_slice(), input.area, positive_or(pre.mean_tau2(), y))?.1
                    }
                };
                let options = ModelOptions {
                    alpha: settings.alpha_update,
                    covariance: CovarianceModel::Spatial,
                };
                (
                    run_mcmc(&train, &priors, &sp, &options, &settings.mcmc)?,
                    sp,
                )
            };
            Ok(FittedModel::Bayes {
                spec: *spec,
                k,
                chain,
                train,
                spatial_prior: sp,
            })
        }
    }
}

/// `v` when it is a usable variance, otherwise the sample variance of `y`.
fn positive_or(v: f64, y: &Vector) -> f64 {
    if v > 0.0 && v.is_finite() {
        v
    } else {
        let s = crate::validation::stats::variance(y.as_slice());
        if s > 0.0 && s.is_finite() {
            s
        } else {
            1.0
        }
    }
}
