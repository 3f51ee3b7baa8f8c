//! The five subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use bpcr_core::baselines::{fit_model, fit_ols, BaselineSpec, FitInput, FittedModel};
use bpcr_core::model::{
    AlphaUpdate, Chain, McmcConfig, ModelOptions, ParamSelector, SpatialPrior, TrainingData,
};
use bpcr_core::pca::{full_design, transform_new, DesignMatrix, RawPredictors};
use bpcr_core::predict::PredictionResult;
use bpcr_core::synthetic::generate_dataset;
use bpcr_core::validation::experiment::{replicate_data, Spread};
use bpcr_core::validation::{
    aggregate, evaluate, maximin_select, run_cell, stats, AggregateRow, CellOutcome, LooReport,
    MetricsReport, Selection, StudyData,
};
use bpcr_core::{rng, Matrix, Vector};
use log::info;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{self, fmt_f64, fmt_opt, CsvOut};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const DATASET: &str = "dataset.csv";
pub const TRUTH: &str = "truth.json";
pub const CHAIN: &str = "chain.csv";
pub const SUMMARY: &str = "summary.json";
pub const MANIFEST: &str = "fit.json";
pub const TRAIN_INDICES: &str = "train_indices.csv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const METRICS: &str = "metrics.json";
pub const RUNS: &str = "runs.csv";
pub const AGGREGATE: &str = "aggregate.json";
pub const PLOT_DATA: &str = "plot_data.csv";
pub const FAILURES: &str = "failures.json";
pub const LOO_PREDICTIONS: &str = "loo_predictions.csv";
pub const LOO_SUMMARY: &str = "loo_summary.json";

const TRAIN_STREAM: u64 = 1;
const PREDICT_STREAM: u64 = 3;

fn echo(cfg: &RunConfig) -> CliResult<()> {
    io::write_json(&cfg.out.join(RESOLVED_CONFIG), cfg)
}

#[derive(Serialize)]
struct Truth<'a> {
    seed: u64,
    beta_true: Vec<f64>,
    theta_true: bpcr_core::spatial::SpatialParams,
    config: &'a bpcr_core::synthetic::SyntheticConfig,
}

/// Writes a synthetic dataset and its generating parameters.
pub fn simulate(cfg: &RunConfig) -> CliResult<()> {
    let d = generate_dataset(&cfg.synthetic)?;
    let p = d.z.ncols();
    let mut header: Vec<String> = ["cell_id", "s_x", "s_y", "y", "eta_plus_eps"]
        .map(String::from)
        .to_vec();
    header.extend((1..=p).map(|j| format!("z_{j}")));
    let mut out = CsvOut::new(&header);
    for i in 0..d.y.len() {
        let [sx, sy] = d.coords.points[i];
        let mut row = vec![
            i.to_string(),
            fmt_f64(sx),
            fmt_f64(sy),
            fmt_f64(d.y[i]),
            fmt_f64(d.eta_plus_eps[i]),
        ];
        row.extend((0..p).map(|j| fmt_f64(d.z[(i, j)])));
        out.row(&row);
    }
    out.save(&cfg.out.join(DATASET))?;
    io::write_json(
        &cfg.out.join(TRUTH),
        &Truth {
            seed: d.seed,
            beta_true: d.beta_true.iter().copied().collect(),
            theta_true: d.theta_true,
            config: &cfg.synthetic,
        },
    )?;
    info!("wrote {} rows to {}", d.y.len(), cfg.out.display());
    echo(cfg)
}

/// What `predict` needs to rebuild a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitManifest {
    pub dataset: PathBuf,
    pub rel_tol: f64,
    pub model: BaselineSpec,
    pub k: usize,
    pub predictor_labels: Vec<String>,
    pub burn_in: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial_prior: Option<SpatialPrior>,
}

/// Full-data design of a dataset file.
struct Design {
    table: io::Table,
    x: DesignMatrix,
    scaling: bpcr_core::pca::ScalingParams,
    basis: bpcr_core::pca::PcaBasis,
}

fn load_design(path: &Path, rel_tol: f64) -> CliResult<Design> {
    let table = io::read_table(path, true)?;
    if table.is_empty() {
        return Err(CliError::schema(path, "no rows"));
    }
    let raw = RawPredictors::new(table.z.clone(), table.labels.clone())?;
    let (x, scaling, basis) = full_design(&raw, rel_tol)?;
    Ok(Design {
        table,
        x,
        scaling,
        basis,
    })
}

impl Design {
    fn y(&self) -> &[f64] {
        self.table.y.as_deref().unwrap_or_default()
    }

    fn train_y(&self, idx: &[usize]) -> Vector {
        Vector::from_iterator(idx.len(), idx.iter().map(|&i| self.y()[i]))
    }
}

fn select_training(cfg: &RunConfig, d: &Design) -> CliResult<Vec<usize>> {
    let total = d.table.len();
    if let Some(path) = &cfg.train_indices {
        let idx = io::read_indices(path, total)?;
        if idx.is_empty() {
            return Err(CliError::schema(path, "no training indices"));
        }
        return Ok(idx);
    }
    let n = cfg.n_train;
    if n == 0 {
        return Err(CliError::Config("n_train must be positive".into()));
    }
    if n >= total {
        return Ok((0..total).collect());
    }
    let mut r = rng::stream(cfg.fit.mcmc.seed, TRAIN_STREAM);
    let mut idx = match cfg.selection {
        Selection::Random => index::sample(&mut r, total, n).into_vec(),
        Selection::Maximin => maximin_select(&d.table.coords, n, &cfg.anneal, &mut r),
    };
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub model: String,
    pub k: usize,
    pub n_train: usize,
    pub n_retained: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    pub parameters: Vec<ParamSummary>,
}

fn param_names(p: usize) -> Vec<(String, ParamSelector)> {
    let mut v: Vec<(String, ParamSelector)> = (0..=p)
        .map(|i| (format!("beta_{i}"), ParamSelector::Beta(i)))
        .collect();
    v.extend([
        ("alpha0".to_string(), ParamSelector::Alpha0),
        ("alpha1".to_string(), ParamSelector::Alpha1),
        ("tau2".to_string(), ParamSelector::Tau2),
        ("sigma2".to_string(), ParamSelector::Sigma2),
        ("phi".to_string(), ParamSelector::Phi),
    ]);
    v
}

/// Mean, median and central 95% interval of each retained parameter.
pub fn summarize_chain(chain: &Chain) -> Vec<ParamSummary> {
    let p = chain.retained().first().map_or(0, |s| s.beta.len() - 1);
    param_names(p)
        .into_iter()
        .map(|(name, sel)| {
            let t = chain.trace(sel);
            let s = stats::sorted(&t);
            ParamSummary {
                name,
                mean: stats::mean(&t),
                median: stats::quantile_sorted(&s, 0.5),
                q025: stats::quantile_sorted(&s, 0.025),
                q975: stats::quantile_sorted(&s, 0.975),
                ess: Some(chain.ess(sel)),
            }
        })
        .collect()
}

const Z975: f64 = 1.959_963_984_540_054;

fn ols_summary(fit: &bpcr_core::baselines::OlsFit) -> CliResult<Vec<ParamSummary>> {
    let s2 = fit.residual_variance();
    let mut out = Vec::with_capacity(fit.k + 2);
    for i in 0..=fit.k {
        let mut e = Vector::zeros(fit.beta.len());
        e[i] = 1.0;
        let se = (s2 * fit.leverage(&e)?).sqrt();
        let b = fit.beta[i];
        out.push(ParamSummary {
            name: format!("beta_{i}"),
            mean: b,
            median: b,
            q025: b - Z975 * se,
            q975: b + Z975 * se,
            ess: None,
        });
    }
    out.push(ParamSummary {
        name: "tau2".into(),
        mean: s2,
        median: s2,
        q025: s2,
        q975: s2,
        ess: None,
    });
    Ok(out)
}

/// Fits one model on a dataset file and writes the chain, its summary and
/// the manifest used by `predict`.
pub fn fit(cfg: &RunConfig) -> CliResult<()> {
    let path = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::Config("fit needs `dataset`".into()))?;
    let d = load_design(&path, cfg.rel_tol)?;
    let idx = select_training(cfg, &d)?;
    let x = d.x.rows(&idx);
    let y = d.train_y(&idx);
    let coords = d.table.coords.subset(&idx);
    info!(
        "fitting {} on {} of {} rows",
        cfg.model,
        idx.len(),
        d.table.len()
    );
    let fitted = fit_model(
        &cfg.model,
        FitInput {
            x: &x,
            y: &y,
            coords: &coords,
            area: &d.table.coords,
        },
        &cfg.fit,
    )?;
    let (parameters, n_retained, acceptance_rate, burn_in, spatial_prior) = match &fitted {
        FittedModel::Ols { fit, .. } => (ols_summary(fit)?, 0, None, 0, None),
        FittedModel::Bayes {
            chain,
            spatial_prior,
            ..
        } => {
            io::write_chain(&cfg.out.join(CHAIN), &chain.states, &chain.accepted)?;
            (
                summarize_chain(chain),
                chain.retained().len(),
                Some(chain.retained_acceptance_rate()),
                chain.burn_in(),
                Some(*spatial_prior),
            )
        }
    };
    io::write_indices(&cfg.out.join(TRAIN_INDICES), &idx)?;
    io::write_json(
        &cfg.out.join(SUMMARY),
        &PosteriorSummary {
            model: cfg.model.label(),
            k: fitted.k(),
            n_train: idx.len(),
            n_retained,
            acceptance_rate,
            parameters,
        },
    )?;
    io::write_json(
        &cfg.out.join(MANIFEST),
        &FitManifest {
            dataset: path,
            rel_tol: cfg.rel_tol,
            model: cfg.model,
            k: fitted.k(),
            predictor_labels: d.table.labels.clone(),
            burn_in,
            seed: cfg.fit.mcmc.seed,
            spatial_prior,
        },
    )?;
    echo(cfg)
}

/// Rebuilds the fitted model from a fit directory.
fn load_fit(dir: &Path) -> CliResult<(FitManifest, Design, FittedModel)> {
    let m: FitManifest = io::read_json(&dir.join(MANIFEST))?;
    let d = load_design(&m.dataset, m.rel_tol)?;
    if d.table.labels != m.predictor_labels {
        return Err(CliError::schema(
            &m.dataset,
            "predictor columns differ from the fitted dataset",
        ));
    }
    let idx = io::read_indices(&dir.join(TRAIN_INDICES), d.table.len())?;
    let x = d.x.rows(&idx);
    let y = d.train_y(&idx);
    let fitted = match m.spatial_prior {
        None => FittedModel::Ols {
            spec: m.model,
            fit: fit_ols(&x, &y, m.k)?,
        },
        Some(sp) => {
            let path = dir.join(CHAIN);
            let (states, accepted) = io::read_chain(&path)?;
            if let Some(s) = states.iter().find(|s| s.beta.len() != m.k + 1) {
                return Err(CliError::schema(
                    &path,
                    format!(
                        "chain has {} coefficients, the fit uses {}",
                        s.beta.len(),
                        m.k + 1
                    ),
                ));
            }
            let burn_in = m.burn_in.min(states.len());
            let states = states[burn_in..].to_vec();
            let accepted = accepted[burn_in..].to_vec();
            let chain = Chain {
                theta_accept_count: accepted.iter().filter(|a| **a).count(),
                config: McmcConfig {
                    n_samples: states.len(),
                    burn_in: 0,
                    ..McmcConfig::default()
                },
                options: ModelOptions {
                    alpha: AlphaUpdate::Conjugate,
                    ..Default::default()
                },
                rng_seed: m.seed,
                states,
                accepted,
            };
            FittedModel::Bayes {
                spec: m.model,
                k: m.k,
                chain,
                train: TrainingData::new(x.truncated(m.k), y, d.table.coords.subset(&idx))?,
                spatial_prior: sp,
            }
        }
    };
    Ok((m, d, fitted))
}

/// Predicts the new-locations file from a saved fit.
pub fn predict(cfg: &RunConfig) -> CliResult<()> {
    let new_path = cfg
        .new_locations
        .clone()
        .ok_or_else(|| CliError::Config("predict needs `new_locations`".into()))?;
    let (m, d, fitted) = load_fit(cfg.fit_dir())?;
    let table = io::read_table(&new_path, false)?;
    let z = table.reorder(&new_path, &m.predictor_labels)?;
    let width = d.basis.p_kept() + 1;
    let mut x_new = Matrix::zeros(table.len(), width);
    for i in 0..table.len() {
        let row: Vec<f64> = z.row(i).iter().copied().collect();
        let t = transform_new(&row, &d.scaling, &d.basis)
            .map_err(|e| CliError::schema(&new_path, format!("row {}: {e}", i + 1)))?;
        x_new.row_mut(i).copy_from(&t.transpose());
    }
    let mut results = if table.is_empty() {
        Vec::new()
    } else {
        let seed = rng::derive_seed(cfg.fit.mcmc.seed, PREDICT_STREAM);
        fitted.predict(&x_new, &table.coords, cfg.include_noise, cfg.level, seed)?
    };
    for (r, id) in results.iter_mut().zip(&table.ids) {
        r.location_id = id.clone();
    }
    io::write_predictions(
        &cfg.out.join(PREDICTIONS),
        &results,
        &table.coords,
        table.y.as_deref(),
    )?;
    info!("predicted {} locations", results.len());
    echo(cfg)
}

/// Metrics of a prediction file against its `y_true` column.
pub fn report(cfg: &RunConfig) -> CliResult<()> {
    let path = cfg
        .predictions
        .clone()
        .unwrap_or_else(|| cfg.out.join(PREDICTIONS));
    let (results, truth) = io::read_predictions(&path)?;
    let truth = truth.ok_or_else(|| CliError::schema(&path, "missing column `y_true`"))?;
    let metrics = evaluate(&results, &truth)?;
    io::write_json(&cfg.out.join(METRICS), &metrics)?;
    echo(cfg)
}

fn pool(cfg: &RunConfig) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        b = b.num_threads(j);
    }
    b.build().map_err(|e| CliError::Config(e.to_string()))
}

/// One benchmark cell with its wall time.
pub struct TimedCell {
    pub cell: CellOutcome,
    pub wall_time_s: f64,
}

#[derive(Serialize)]
struct Failure {
    model: String,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    replicate: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    location_id: Option<String>,
    error: String,
}

pub const RUNS_HEADER: [&str; 10] = [
    "model",
    "n",
    "replicate",
    "bias_pct",
    "rmse_pct",
    "q2",
    "ci_length_mean",
    "coverage_pct",
    "wall_time_s",
    "error",
];

/// Runs every (model, n, replicate) cell of the plan in parallel.
pub fn run_cells(cfg: &RunConfig) -> CliResult<Vec<TimedCell>> {
    let plan = &cfg.plan;
    cfg.synthetic.validate()?;
    plan.validate(cfg.synthetic.n_points())?;
    let pool = pool(cfg)?;
    pool.install(|| {
        let data = (0..plan.replicates)
            .into_par_iter()
            .map(|r| replicate_data(plan, &cfg.synthetic, r))
            .collect::<Result<Vec<StudyData>, _>>()?;
        let mut jobs = Vec::new();
        for spec in &plan.model_specs {
            for &n in &plan.training_sizes {
                for r in 0..plan.replicates {
                    jobs.push((*spec, n, r));
                }
            }
        }
        let mut cells: Vec<TimedCell> = jobs
            .into_par_iter()
            .map(|(spec, n, r)| {
                let t = Instant::now();
                let cell = run_cell(plan, &data[r], &spec, n, r);
                let wall_time_s = t.elapsed().as_secs_f64();
                info!("{} n={n} replicate={r}: {:.2}s", spec.label(), wall_time_s);
                TimedCell { cell, wall_time_s }
            })
            .collect();
        cells.sort_by_key(|c| (c.cell.spec, c.cell.n, c.cell.replicate));
        Ok(cells)
    })
}

/// Replicated synthetic benchmark, or leave-one-out on `dataset` when one
/// is configured.
pub fn benchmark(cfg: &RunConfig) -> CliResult<()> {
    if cfg.dataset.is_some() {
        return benchmark_loo(cfg);
    }
    let cells = run_cells(cfg)?;
    let mut out = CsvOut::new(&RUNS_HEADER);
    let mut failures = Vec::new();
    for t in &cells {
        let c = &t.cell;
        let mut row = vec![c.spec.label(), c.n.to_string(), c.replicate.to_string()];
        match &c.result {
            Ok(m) => {
                row.extend([m.bias_pct, m.rmse_pct, m.q2].map(fmt_f64));
                row.push(fmt_opt(m.ci_length_mean));
                row.push(fmt_opt(m.coverage_pct));
                row.push(fmt_f64(t.wall_time_s));
                row.push(String::new());
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(fmt_f64(t.wall_time_s));
                row.push(e.to_string());
                failures.push(Failure {
                    model: c.spec.label(),
                    n: c.n,
                    replicate: Some(c.replicate),
                    location_id: None,
                    error: e.to_string(),
                });
            }
        }
        out.row(&row);
    }
    out.save(&cfg.out.join(RUNS))?;
    let plain: Vec<CellOutcome> = cells.into_iter().map(|t| t.cell).collect();
    let rows = aggregate(&plain);
    io::write_json(&cfg.out.join(AGGREGATE), &rows)?;
    if cfg.plot_data {
        write_plot_data(&cfg.out.join(PLOT_DATA), &rows)?;
    }
    finish(cfg, failures, plain.len())
}

fn finish(cfg: &RunConfig, failures: Vec<Failure>, total: usize) -> CliResult<()> {
    let path = cfg.out.join(FAILURES);
    if failures.is_empty() {
        if path.exists() {
            std::fs::remove_file(&path).map_err(|e| CliError::io(&path, e))?;
        }
        return echo(cfg);
    }
    io::write_json(&path, &failures)?;
    echo(cfg)?;
    Err(CliError::Partial {
        failed: failures.len(),
        total,
    })
}

/// Long format: one row per (model, n, metric).
fn write_plot_data(path: &Path, rows: &[AggregateRow]) -> CliResult<()> {
    let mut out = CsvOut::new(&["model", "n", "metric", "mean", "sd"]);
    for r in rows {
        let metrics: [(&str, Option<Spread>); 5] = [
            ("bias_pct", r.bias_pct),
            ("rmse_pct", r.rmse_pct),
            ("q2", r.q2),
            ("ci_length_mean", r.ci_length_mean),
            ("coverage_pct", r.coverage_pct),
        ];
        for (name, s) in metrics {
            if let Some(s) = s {
                out.row(&[
                    r.model.clone(),
                    r.n.to_string(),
                    name.to_string(),
                    fmt_f64(s.mean),
                    fmt_f64(s.sd),
                ]);
            }
        }
    }
    out.save(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct LooSummaryRow {
    pub model: String,
    pub n: usize,
    pub folds: usize,
    pub skipped: usize,
    pub metrics: Option<MetricsReport>,
}

/// Leave-one-out over the dataset for every model and training size; folds
/// run in parallel.
fn benchmark_loo(cfg: &RunConfig) -> CliResult<()> {
    let path = cfg.dataset.clone().expect("checked by caller");
    let table = io::read_table(&path, true)?;
    let raw = RawPredictors::new(table.z.clone(), table.labels.clone())?;
    let y = Vector::from_vec(table.y.clone().unwrap_or_default());
    let data = StudyData::from_raw(&raw, y, table.coords.clone(), cfg.rel_tol)?;
    let plan = &cfg.plan;
    if plan.model_specs.is_empty() || plan.training_sizes.is_empty() {
        return Err(CliError::Config(
            "plan needs models and training sizes".into(),
        ));
    }
    plan.fit.mcmc.validate()?;
    let pool = pool(cfg)?;
    let mut header: Vec<&str> = vec!["model", "n"];
    header.extend(io::PREDICTION_HEADER);
    let mut out = CsvOut::new(&header);
    let mut summary = Vec::new();
    let mut failures = Vec::new();
    let mut total = 0;
    for spec in &plan.model_specs {
        for &n in &plan.training_sizes {
            let report = pool.install(|| loo_parallel(&data, cfg, spec, n))?;
            total += data.len();
            for (i, p) in &report.predictions {
                let [sx, sy] = data.coords.points[*i];
                let mut row = vec![
                    spec.label(),
                    n.to_string(),
                    table.ids[*i].clone(),
                    fmt_f64(sx),
                    fmt_f64(sy),
                ];
                row.extend(
                    [data.y[*i], p.mean, p.median, p.ci_low, p.ci_high, p.level].map(fmt_f64),
                );
                out.row(&row);
            }
            for (i, e) in &report.skipped {
                failures.push(Failure {
                    model: spec.label(),
                    n,
                    replicate: None,
                    location_id: Some(table.ids[*i].clone()),
                    error: e.to_string(),
                });
            }
            summary.push(LooSummaryRow {
                model: spec.label(),
                n,
                folds: data.len(),
                skipped: report.skipped.len(),
                metrics: report.metrics,
            });
        }
    }
    out.save(&cfg.out.join(LOO_PREDICTIONS))?;
    io::write_json(&cfg.out.join(LOO_SUMMARY), &summary)?;
    finish(cfg, failures, total)
}

fn loo_parallel(
    data: &StudyData,
    cfg: &RunConfig,
    spec: &BaselineSpec,
    n: usize,
) -> CliResult<LooReport> {
    if n < 3 || n + 1 > data.len() {
        return Err(CliError::Config(format!(
            "training size {n} must lie in [3, {}]",
            data.len().saturating_sub(1)
        )));
    }
    let folds: Vec<(usize, Result<PredictionResult, bpcr_core::Error>)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            (
                i,
                bpcr_core::validation::experiment::loo_fold(data, &cfg.plan, spec, n, i),
            )
        })
        .collect();
    let mut predictions = Vec::new();
    let mut skipped = Vec::new();
    for (i, r) in folds {
        match r {
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
