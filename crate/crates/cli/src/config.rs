//! Run configuration: one file for every subcommand, plus flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use bpcr_core::baselines::{BaselineSpec, FitSettings, ModelKind};
use bpcr_core::pca::DEFAULT_REL_TOL;
use bpcr_core::synthetic::SyntheticConfig;
use bpcr_core::validation::{AnnealConfig, ExperimentPlan, Selection};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; when set it replaces the seeds of the generator, the
    /// sampler and the experiment plan.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads for `benchmark`; all cores when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub synthetic: SyntheticConfig,
    /// Dataset CSV for `fit`, or for a leave-one-out `benchmark`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// CSV with an `index` column of 0-based training rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_indices: Option<PathBuf>,
    pub n_train: usize,
    pub selection: Selection,
    pub anneal: AnnealConfig,
    pub model: BaselineSpec,
    pub fit: FitSettings,
    pub rel_tol: f64,
    /// Output directory of a previous `fit`; defaults to `out`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub new_locations: Option<PathBuf>,
    /// Prediction CSV read by `report`; defaults to `out/predictions.csv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    pub include_noise: bool,
    pub level: f64,
    pub plan: ExperimentPlan,
    /// Also write the long-format plot-data CSV from `benchmark`.
    pub plot_data: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            jobs: None,
            out: PathBuf::from("out"),
            synthetic: SyntheticConfig::default(),
            dataset: None,
            train_indices: None,
            n_train: 50,
            selection: Selection::Random,
            anneal: AnnealConfig::default(),
            model: BaselineSpec::of(ModelKind::BpcrSpatial),
            fit: FitSettings::default(),
            rel_tol: DEFAULT_REL_TOL,
            fit_dir: None,
            new_locations: None,
            predictions: None,
            include_noise: true,
            level: 0.95,
            plan: ExperimentPlan::default(),
            plot_data: true,
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub model: Option<BaselineSpec>,
    pub n_train: Option<usize>,
    pub replicates: Option<usize>,
    pub no_noise: bool,
}

impl RunConfig {
    /// Parses JSON, or TOML when the file ends in `.toml`.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let is_toml = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    /// Applies flags and propagates the master seed.
    pub fn resolve(mut self, o: &Overrides) -> CliResult<Self> {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.jobs.is_some() {
            self.jobs = o.jobs;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(m) = o.model {
            self.model = m;
            if !self.plan.model_specs.contains(&m) {
                self.plan.model_specs = vec![m];
            }
        }
        if let Some(n) = o.n_train {
            self.n_train = n;
            self.plan.training_sizes = vec![n];
        }
        if let Some(r) = o.replicates {
            self.plan.replicates = r;
        }
        if o.no_noise {
            self.include_noise = false;
            self.plan.include_noise = false;
        }
        if let Some(s) = self.seed {
            self.synthetic.seed = s;
            self.fit.mcmc.seed = s;
            self.plan.seed = s;
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Config("level must lie in (0, 1)".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(CliError::Config("rel_tol must lie in (0, 1)".into()));
        }
        self.fit.mcmc.validate()?;
        Ok(self)
    }

    pub fn fit_dir(&self) -> &Path {
        self.fit_dir.as_deref().unwrap_or(&self.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"n_trian": 5}"#).unwrap_err();
        assert!(err.to_string().contains("n_trian"));
        let nested = serde_json::from_str::<RunConfig>(r#"{"fit": {"mcmc": {"samples": 5}}}"#);
        assert!(nested.is_err());
    }

    #[test]
    fn seed_propagates() {
        let o = Overrides {
            seed: Some(9),
            ..Default::default()
        };
        let c = RunConfig::default().resolve(&o).unwrap();
        assert_eq!((c.synthetic.seed, c.fit.mcmc.seed, c.plan.seed), (9, 9, 9));
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::default().resolve(&Overrides::default()).unwrap();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
