//! Prediction metrics, MaxiMin training-set selection, leave-one-out
//! cross-validation and replicated experiment cells.

pub mod experiment;
pub mod maximin;
pub mod stats;

use crate::predict::PredictionResult;
use crate::{Error, Result};
use num_traits::Float;

pub use experiment::{
    aggregate, loo_crossval, run_benchmark, run_cell, AggregateRow, CellOutcome, ExperimentPlan,
    LooReport, Selection, StudyData,
};
pub use maximin::{maximin_select, min_pairwise_distance, AnnealConfig};

/// Accuracy and interval summaries over a set of evaluation points.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub bias_pct: f64,
    pub rmse_pct: f64,
    pub q2: f64,
    pub n_eval: usize,
    pub ci_length_mean: Option<f64>,
    pub coverage_pct: Option<f64>,
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions vs truth",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(())
}

fn truth_mean(truth: &[f64]) -> Result<f64> {
    let m = stats::mean(truth);
    let s = stats::sd(truth);
    if m == 0.0 || Float::abs(m) < 1e-12 * s {
        return Err(Error::ZeroMeanTruth);
    }
    Ok(m)
}

/// `100 · mean(pred − truth) / mean(truth)`.
pub fn bias_pct(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let m = truth_mean(truth)?;
    let d = pred.iter().zip(truth).map(|(p, t)| p - t).sum::<f64>() / truth.len() as f64;
    Ok(100.0 * d / m)
}

/// `100 · sqrt(mean((pred − truth)²)) / mean(truth)`.
pub fn rmse_pct(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let m = truth_mean(truth)?;
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / truth.len() as f64;
    Ok(100.0 * Float::sqrt(mse) / m)
}

/// `100 · (1 − Σ(pred − truth)² / Σ(truth − mean(truth))²)`.
pub fn q2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let m = stats::mean(truth);
    let sst: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    if !(sst > 0.0) {
        return Err(Error::ConstantTruth);
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(100.0 * (1.0 - sse / sst))
}

/// Mean interval length and percentage of truths inside the closed
/// intervals.
pub fn interval_metrics(results: &[PredictionResult], truth: &[f64]) -> Result<(f64, f64)> {
    if results.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions vs truth",
            expected: truth.len(),
            found: results.len(),
        });
    }
    if results.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    if results.iter().any(|r| r.level != results[0].level) {
        return Err(Error::InvalidParam("interval levels differ"));
    }
    let n = results.len() as f64;
    let len = results.iter().map(|r| r.ci_high - r.ci_low).sum::<f64>() / n;
    let inside = results
        .iter()
        .zip(truth)
        .filter(|(r, t)| r.ci_low <= **t && **t <= r.ci_high)
        .count();
    Ok((len, 100.0 * inside as f64 / n))
}

/// All metrics, with the predictive means as point predictions.
pub fn evaluate(results: &[PredictionResult], truth: &[f64]) -> Result<MetricsReport> {
    let pred: alloc::vec::Vec<f64> = results.iter().map(|r| r.mean).collect();
    let (len, cov) = interval_metrics(results, truth)?;
    Ok(MetricsReport {
        bias_pct: bias_pct(&pred, truth)?,
        rmse_pct: rmse_pct(&pred, truth)?,
        q2: q2(&pred, truth)?,
        n_eval: truth.len(),
        ci_length_mean: Some(len),
        coverage_pct: Some(cov),
    })
}
