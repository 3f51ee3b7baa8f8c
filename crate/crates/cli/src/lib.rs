//! File-based driver for the `bpcr-core` models: simulation, fitting,
//! prediction, benchmarking and reporting.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use bpcr_core::baselines::{BaselineSpec, ModelKind};
use clap::{Args, Parser, Subcommand};

pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "bpcr",
    version,
    about = "Bayesian principal component regression with spatial effects"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its ground truth.
    Simulate,
    /// Fit one model on a dataset CSV.
    Fit,
    /// Predict new locations from a saved fit.
    Predict,
    /// Run the replicated experiment, or leave-one-out on a dataset.
    Benchmark,
    /// Metrics of a prediction CSV with a `y_true` column.
    Report,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON (or .toml) run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Model kind, with `:k` for the fixed-k kinds, e.g. `pcr_k:5`.
    #[arg(long, global = true, value_parser = parse_model)]
    pub model: Option<BaselineSpec>,
    #[arg(long, global = true)]
    pub n_train: Option<usize>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Leave the nugget out of predictive intervals.
    #[arg(long, global = true)]
    pub no_noise: bool,
}

/// `kind` or `kind:k`.
pub fn parse_model(s: &str) -> Result<BaselineSpec, String> {
    let (kind, k) = match s.split_once(':') {
        Some((kind, k)) => (
            kind,
            Some(
                k.parse::<usize>()
                    .map_err(|e| format!("bad k `{k}`: {e}"))?,
            ),
        ),
        None => (s, None),
    };
    let kind: ModelKind = kind.parse().map_err(|e: bpcr_core::Error| e.to_string())?;
    BaselineSpec::new(kind, k).map_err(|e| e.to_string())
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            jobs: self.jobs,
            out: self.out.clone(),
            model: self.model,
            n_train: self.n_train,
            replicates: self.replicates,
            no_noise: self.no_noise,
        }
    }

    /// The file configuration (or defaults) with the flags applied.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        base.resolve(&self.overrides())
    }
}

pub fn run(command: Command, cfg: &RunConfig) -> CliResult<()> {
    match command {
        Command::Simulate => commands::simulate(cfg),
        Command::Fit => commands::fit(cfg),
        Command::Predict => commands::predict(cfg),
        Command::Benchmark => commands::benchmark(cfg),
        Command::Report => commands::report(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_flag() {
        assert_eq!(
            parse_model("bpcr").unwrap(),
            BaselineSpec::of(ModelKind::Bpcr)
        );
        assert_eq!(parse_model("pcr_k:4").unwrap().k, Some(4));
        assert!(parse_model("pcr_k").is_err());
        assert!(parse_model("ridge").is_err());
    }
}
