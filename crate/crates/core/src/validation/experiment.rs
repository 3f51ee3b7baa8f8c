//! Replicated train/validate experiments and leave-one-out cross-validation.
//!
//! Every replicate draws a fresh synthetic dataset and fresh training
//! indices. Within a replicate all models share the dataset, the training
//! set and the sampler seed, so model comparisons are paired.

use alloc::vec::Vec;

use rand::seq::index;

use super::maximin::{maximin_select, AnnealConfig};
use super::{evaluate, stats, MetricsReport};
use crate::baselines::{fit_model, BaselineSpec, FitInput, FitSettings, ModelKind};
use crate::model::McmcConfig;
use crate::pca::{full_design, DesignMatrix, RawPredictors};
use crate::predict::PredictionResult;
use crate::spatial::Coordinates;
use crate::synthetic::{generate_dataset, SyntheticConfig, SyntheticDataset};
use crate::{rng, Error, Result, Vector};

/// How training locations are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Selection {
    #[default]
    Random,
    Maximin,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ExperimentPlan {
    pub model_specs: Vec<BaselineSpec>,
    pub training_sizes: Vec<usize>,
    pub replicates: usize,
    pub selection: Selection,
    pub seed: u64,
    pub fit: FitSettings,
    pub include_noise: bool,
    pub level: f64,
    pub anneal: AnnealConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            model_specs: [
                ModelKind::Pcr,
                ModelKind::PcrSpatial,
                ModelKind::Bpcr,
                ModelKind::BpcrSpatial,
            ]
            .into_iter()
            .map(BaselineSpec::of)
            .collect(),
            training_sizes: alloc::vec![30, 50, 120],
            replicates: 20,
            selection: Selection::Random,
            seed: 0,
            fit: FitSettings::default(),
            include_noise: true,
            level: 0.95,
            anneal: AnnealConfig::default(),
        }
    }
}

impl ExperimentPlan {
    /// Checks the plan against a dataset of `n_total` locations.
    pub fn validate(&self, n_total: usize) -> Result<()> {
        if self.model_specs.is_empty() || self.training_sizes.is_empty() || self.replicates == 0 {
            return Err(Error::InvalidConfig(
                "plan needs models, training sizes and replicates".into(),
            ));
        }
        for spec in &self.model_specs {
            spec.validate(None)?;
        }
        if let Some(n) = self
            .training_sizes
            .iter()
            .find(|n| **n < 3 || **n >= n_total)
        {
            return Err(Error::InvalidConfig(alloc::format!(
                "training size {n} must lie in [3, {n_total})"
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidConfig("level must lie in (0, 1)".into()));
        }
        self.fit.mcmc.validate()
    }
}

/// Full-data design and response of a study area.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyData {
    /// Principal-component design over all locations.
    pub x: DesignMatrix,
    pub y: Vector,
    pub coords: Coordinates,
}

impl StudyData {
    /// Builds the design from raw predictors of all locations.
    pub fn from_raw(
        raw: &RawPredictors,
        y: Vector,
        coords: Coordinates,
        rel_tol: f64,
    ) -> Result<Self> {
        let (x, _, _) = full_design(raw, rel_tol)?;
        if y.len() != x.nrows() || coords.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                what: "study rows",
                expected: x.nrows(),
                found: if y.len() != x.nrows() {
                    y.len()
                } else {
                    coords.len()
                },
            });
        }
        Ok(Self { x, y, coords })
    }

    pub fn from_synthetic(d: &SyntheticDataset) -> Result<Self> {
        let raw = RawPredictors::unlabeled(d.z.clone())?;
        Self::from_raw(
            &raw,
            d.y.clone(),
            d.coords.clone(),
            crate::pca::DEFAULT_REL_TOL,
        )
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Fits `spec` on `train` and predicts the `eval` rows.
    pub fn fit_predict(
        &self,
        spec: &BaselineSpec,
        train: &[usize],
        eval: &[usize],
        settings: &FitSettings,
        include_noise: bool,
        level: f64,
        seed: u64,
    ) -> Result<Vec<PredictionResult>> {
        let x = self.x.rows(train);
        let y = Vector::from_iterator(train.len(), train.iter().map(|&i| self.y[i]));
        let coords = self.coords.subset(train);
        let input = FitInput {
            x: &x,
            y: &y,
            coords: &coords,
            area: &self.coords,
        };
        let fitted = fit_model(spec, input, settings)?;
        let x_new = self.x.rows(eval).x;
        fitted.predict(
            &x_new,
            &self.coords.subset(eval),
            include_noise,
            level,
            seed,
        )
    }

    fn truth(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.y[i]).collect()
    }
}

/// Seed of replicate `r`.
pub fn replicate_seed(plan_seed: u64, replicate: usize) -> u64 {
    rng::derive_seed(plan_seed, replicate as u64)
}

/// Synthetic configuration of replicate `r`.
pub fn replicate_config(
    base: &SyntheticConfig,
    plan_seed: u64,
    replicate: usize,
) -> SyntheticConfig {
    SyntheticConfig {
        seed: replicate_seed(plan_seed, replicate),
        ..base.clone()
    }
}

/// Dataset of replicate `r`.
pub fn replicate_data(
    plan: &ExperimentPlan,
    base: &SyntheticConfig,
    replicate: usize,
) -> Result<StudyData> {
    StudyData::from_synthetic(&generate_dataset(&replicate_config(
        base, plan.seed, replicate,
    ))?)
}

const TRAIN_STREAM: u64 = 1 << 32;
const MCMC_STREAM: u64 = 2 << 32;
const PREDICT_STREAM: u64 = 3 << 32;

/// `n` indices out of `candidates` by the plan's selection rule.
fn select(
    plan: &ExperimentPlan,
    coords: &Coordinates,
    candidates: &[usize],
    n: usize,
    rng: &mut rng::Rng,
) -> Vec<usize> {
    if n >= candidates.len() {
        return candidates.to_vec();
    }
    let local = match plan.selection {
        Selection::Random => {
            let mut v = index::sample(rng, candidates.len(), n).into_vec();
            v.sort_unstable();
            v
        }
        Selection::Maximin => maximin_select(&coords.subset(candidates), n, &plan.anneal, rng),
    };
    local.into_iter().map(|i| candidates[i]).collect()
}

/// Training indices of cell `(n, replicate)`, shared by all models.
pub fn training_indices(
    plan: &ExperimentPlan,
    data: &StudyData,
    n: usize,
    replicate: usize,
) -> Vec<usize> {
    let seed = replicate_seed(plan.seed, replicate);
    let mut r = rng::stream(seed, TRAIN_STREAM + n as u64);
    let all: Vec<usize> = (0..data.len()).collect();
    select(plan, &data.coords, &all, n, &mut r)
}

fn cell_settings(plan: &ExperimentPlan, seed: u64) -> FitSettings {
    FitSettings {
        mcmc: McmcConfig {
            seed,
            ..plan.fit.mcmc
        },
        ..plan.fit
    }
}

/// Result of one (model, training size, replicate) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub spec: BaselineSpec,
    pub n: usize,
    pub replicate: usize,
    pub result: core::result::Result<MetricsReport, Error>,
}

/// Fits on the cell's training set and evaluates on every other location.
pub fn run_cell(
    plan: &ExperimentPlan,
    data: &StudyData,
    spec: &BaselineSpec,
    n: usize,
    replicate: usize,
) -> CellOutcome {
    let train = training_indices(plan, data, n, replicate);
    let mut in_train = alloc::vec![false; data.len()];
    for &i in &train {
        in_train[i] = true;
    }
    let eval: Vec<usize> = (0..data.len()).filter(|i| !in_train[*i]).collect();
    let seed = replicate_seed(plan.seed, replicate);
    let settings = cell_settings(plan, rng::derive_seed(seed, MCMC_STREAM + n as u64));
    let pred_seed = rng::derive_seed(seed, PREDICT_STREAM + n as u64);
    let result = data
        .fit_predict(
            spec,
            &train,
            &eval,
            &settings,
            plan.include_noise,
            plan.level,
            pred_seed,
        )
        .and_then(|preds| evaluate(&preds, &data.truth(&eval)));
    CellOutcome {
        spec: *spec,
        n,
        replicate,
        result,
    }
}

/// All cells of the plan, run one after another.
pub fn run_benchmark(plan: &ExperimentPlan, base: &SyntheticConfig) -> Result<Vec<CellOutcome>> {
    base.validate()?;
    plan.validate(base.n_points())?;
    let mut out = Vec::new();
    for r in 0..plan.replicates {
        let data = replicate_data(plan, base, r)?;
        for &n in &plan.training_sizes {
            for spec in &plan.model_specs {
                out.push(run_cell(plan, &data, spec, n, r));
            }
        }
    }
    Ok(out)
}

/// Mean and standard deviation of one metric across replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Spread {
    pub mean: f64,
    pub sd: f64,
}

impl Spread {
    fn of(v: &[f64]) -> Option<Self> {
        (!v.is_empty()).then(|| Spread {
            mean: stats::mean(v),
            sd: stats::sd(v),
        })
    }
}

/// Summary of all replicates of one (model, training size).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregateRow {
    pub model: alloc::string::String,
    pub n: usize,
    pub replicates: usize,
    pub failures: usize,
    pub bias_pct: Option<Spread>,
    pub rmse_pct: Option<Spread>,
    pub q2: Option<Spread>,
    pub ci_length_mean: Option<Spread>,
    pub coverage_pct: Option<Spread>,
}

/// Groups cells by (model, n). Cells are ordered by replicate before
/// reduction so the result does not depend on completion order.
pub fn aggregate(cells: &[CellOutcome]) -> Vec<AggregateRow> {
    let mut sorted: Vec<&CellOutcome> = cells.iter().collect();
    sorted.sort_by_key(|c| (c.spec, c.n, c.replicate));
    let mut rows = Vec::new();
    let mut start = 0;
    while start < sorted.len() {
        let key = (sorted[start].spec, sorted[start].n);
        let end = start
            + sorted[start..]
                .iter()
                .take_while(|c| (c.spec, c.n) == key)
                .count();
        let group = &sorted[start..end];
        let ok: Vec<&MetricsReport> = group
            .iter()
            .filter_map(|c| c.result.as_ref().ok())
            .collect();
        let col = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Option<Spread> {
            Spread::of(&ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>())
        };
        rows.push(AggregateRow {
            model: key.0.label(),
            n: key.1,
            replicates: group.len(),
            failures: group.len() - ok.len(),
            bias_pct: col(&|m| Some(m.bias_pct)),
            rmse_pct: col(&|m| Some(m.rmse_pct)),
            q2: col(&|m| Some(m.q2)),
            ci_length_mean: col(&|m| m.ci_length_mean),
            coverage_pct: col(&|m| m.coverage_pct),
        });
        start = end;
    }
    rows
}

/// Leave-one-out run: one prediction per location.
#[derive(Debug, Clone, PartialEq)]
pub struct LooReport {
    pub metrics: Option<MetricsReport>,
    /// Held-out index and its prediction, for folds that succeeded.
    pub predictions: Vec<(usize, PredictionResult)>,
    /// Held-out index and error of folds that failed.
    pub skipped: Vec<(usize, Error)>,
}

/// Each location is held out in turn; `n` training locations are chosen
/// from the remaining ones by the plan's selection rule and the held-out
/// value is predicted.
pub fn loo_crossval(
    data: &StudyData,
    plan: &ExperimentPlan,
    spec: &BaselineSpec,
    n: usize,
) -> Result<LooReport> {
    let total = data.len();
    if n + 1 > total || n < 3 {
        return Err(Error::InvalidConfig(alloc::format!(
            "training size {n} must lie in [3, {}]",
            total.saturating_sub(1)
        )));
    }
    let mut predictions = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..total {
        match loo_fold(data, plan, spec, n, i) {
            Ok(p) => predictions.push((i, p)),
            Err(e) => skipped.push((i, e)),
        }
    }
    let metrics = if predictions.is_empty() {
        None
    } else {
        let preds: Vec<PredictionResult> = predictions.iter().map(|(_, p)| p.clone()).collect();
        let truth: Vec<f64> = predictions.iter().map(|(i, _)| data.y[*i]).collect();
        Some(evaluate(&preds, &truth)?)
    };
    Ok(LooReport {
        metrics,
        predictions,
        skipped,
    })
}

/// Fold `i` of [`loo_crossval`].
pub fn loo_fold(
    data: &StudyData,
    plan: &ExperimentPlan,
    spec: &BaselineSpec,
    n: usize,
    i: usize,
) -> Result<PredictionResult> {
    let seed = rng::derive_seed(plan.seed, i as u64);
    let candidates: Vec<usize> = (0..data.len()).filter(|j| *j != i).collect();
    let train = select(
        plan,
        &data.coords,
        &candidates,
        n,
        &mut rng::stream(seed, TRAIN_STREAM),
    );
    let settings = cell_settings(plan, rng::derive_seed(seed, MCMC_STREAM));
    let mut p = data.fit_predict(
        spec,
        &train,
        &[i],
        &settings,
        plan.include_noise,
        plan.level,
        rng::derive_seed(seed, PREDICT_STREAM),
    )?;
    Ok(p.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::SpatialParams;

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            model_specs: alloc::vec![
                BaselineSpec::of(ModelKind::Pcr),
                BaselineSpec::of(ModelKind::Bpcr)
            ],
            training_sizes: alloc::vec![30],
            replicates: 2,
            fit: FitSettings {
                mcmc: McmcConfig {
                    n_samples: 300,
                    burn_in: 100,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn small_config() -> SyntheticConfig {
        SyntheticConfig {
            grid_side: 8,
            ..Default::default()
        }
    }

    #[test]
    fn benchmark_is_reproducible_and_aggregates() {
        let plan = small_plan();
        let a = run_benchmark(&plan, &small_config()).unwrap();
        let b = run_benchmark(&plan, &small_config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|c| c.result.is_ok()));
        let mut shuffled = a.clone();
        shuffled.reverse();
        let agg = aggregate(&shuffled);
        assert_eq!(agg, aggregate(&a));
        assert_eq!(agg.len(), 2);
        let pcr: Vec<f64> = a
            .iter()
            .filter(|c| c.spec.kind == ModelKind::Pcr)
            .map(|c| c.result.as_ref().unwrap().rmse_pct)
            .collect();
        let row = agg.iter().find(|r| r.model == "pcr").unwrap();
        assert_eq!(row.rmse_pct.unwrap().mean, stats::mean(&pcr));
    }

    #[test]
    fn training_sets_are_shared_and_disjoint_from_evaluation() {
        let plan = small_plan();
        let data = replicate_data(&plan, &small_config(), 0).unwrap();
        let t = training_indices(&plan, &data, 30, 0);
        assert_eq!(t.len(), 30);
        assert_eq!(t, training_indices(&plan, &data, 30, 0));
        assert_ne!(t, training_indices(&plan, &data, 30, 1));
    }

    #[test]
    fn plan_validation() {
        let mut plan = small_plan();
        plan.training_sizes = alloc::vec![64];
        assert!(plan.validate(64).is_err());
        plan.training_sizes = alloc::vec![10];
        assert!(plan.validate(64).is_ok());
    }

    #[test]
    fn loo_with_all_remaining_points_is_deterministic() {
        let cfg = SyntheticConfig {
            scattered_points: Some(12),
            n_corr: 2,
            n_noise: 1,
            beta_reg: alloc::vec![1.0, 2.0],
            ..Default::default()
        };
        let data = StudyData::from_synthetic(&generate_dataset(&cfg).unwrap()).unwrap();
        let plan = ExperimentPlan {
            selection: Selection::Maximin,
            ..small_plan()
        };
        let spec = BaselineSpec::of(ModelKind::Pcr);
        let a = loo_crossval(&data, &plan, &spec, 11).unwrap();
        assert_eq!(a.predictions.len(), 12);
        assert!(a.skipped.is_empty());
        assert_eq!(a, loo_crossval(&data, &plan, &spec, 11).unwrap());
    }

    #[test]
    fn loo_on_pure_noise_gives_q2_near_zero() {
        let cfg = SyntheticConfig {
            scattered_points: Some(60),
            beta_reg: alloc::vec![],
            theta_true: SpatialParams {
                tau2: 1.0,
                sigma2: 0.0,
                phi: 1.0,
            },
            ..Default::default()
        };
        let data = StudyData::from_synthetic(&generate_dataset(&cfg).unwrap()).unwrap();
        let spec = BaselineSpec {
            kind: ModelKind::PcrK,
            k: Some(1),
        };
        let r = loo_crossval(&data, &small_plan(), &spec, 59).unwrap();
        let q2 = r.metrics.unwrap().q2;
        assert!(q2 < 5.0 && q2 > -15.0, "{q2}");
    }
}
