//! CSV and JSON files: dataset tables, chains, predictions and atomic
//! writes.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use bpcr_core::model::ModelState;
use bpcr_core::predict::PredictionResult;
use bpcr_core::spatial::{Coordinates, SpatialParams};
use bpcr_core::{Matrix, Vector};
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Floating point with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::schema(path, e.to_string()))
}

/// Builds CSV text in memory.
pub struct CsvOut {
    w: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header.iter().map(|s| s.as_ref()))
            .expect("in-memory write");
        Self { w }
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        self.w
            .write_record(fields.iter().map(|s| s.as_ref()))
            .expect("in-memory write");
    }

    pub fn save(self, path: &Path) -> CliResult<()> {
        let bytes = self
            .w
            .into_inner()
            .map_err(|e| CliError::io(path, e.into_error()))?;
        write_atomic(path, &bytes)
    }
}

/// Parsed CSV with named columns.
pub struct RawCsv {
    pub header: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
}

pub fn read_csv(path: &Path) -> CliResult<RawCsv> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut seen = HashSet::new();
    if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(CliError::schema(path, format!("duplicate column `{dup}`")));
    }
    let rows = r
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| csv_error(path, e))?;
    Ok(RawCsv { header, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::schema(path, format!("{other:?}")),
    }
}

impl RawCsv {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn require(&self, path: &Path, name: &str) -> CliResult<usize> {
        self.column(name)
            .ok_or_else(|| CliError::schema(path, format!("missing column `{name}`")))
    }

    /// Value at `(row, col)`; rows are reported 1-based after the header.
    pub fn f64_at(&self, path: &Path, row: usize, col: usize) -> CliResult<f64> {
        let raw = &self.rows[row][col];
        raw.parse::<f64>().map_err(|_| {
            CliError::schema(
                path,
                format!(
                    "row {}, column `{}`: cannot parse `{raw}` as a number",
                    row + 1,
                    self.header[col]
                ),
            )
        })
    }

    pub fn f64_column(&self, path: &Path, col: usize) -> CliResult<Vec<f64>> {
        (0..self.rows.len())
            .map(|r| self.f64_at(path, r, col))
            .collect()
    }
}

/// Columns that never hold predictors.
pub const RESERVED: [&str; 8] = [
    "id",
    "cell_id",
    "location_id",
    "s_x",
    "s_y",
    "y",
    "y_true",
    "eta_plus_eps",
];

/// Locations with coordinates, predictors and an optional response.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub ids: Vec<String>,
    pub coords: Coordinates,
    pub y: Option<Vec<f64>>,
    pub labels: Vec<String>,
    pub z: Matrix,
}

impl Table {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Predictors in the column order of `labels`.
    pub fn reorder(&self, path: &Path, labels: &[String]) -> CliResult<Matrix> {
        let cols = labels
            .iter()
            .map(|l| {
                self.labels
                    .iter()
                    .position(|m| m == l)
                    .ok_or_else(|| CliError::schema(path, format!("missing column `{l}`")))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Matrix::from_fn(self.len(), cols.len(), |i, j| {
            self.z[(i, cols[j])]
        }))
    }
}

/// Reads a location table. The id column may be `id`, `cell_id` or
/// `location_id` (row numbers when absent); the response is `y` or
/// `y_true`; every other non-reserved column is a predictor.
pub fn read_table(path: &Path, require_y: bool) -> CliResult<Table> {
    let csv = read_csv(path)?;
    let sx = csv.require(path, "s_x")?;
    let sy = csv.require(path, "s_y")?;
    let ycol = csv.column("y").or_else(|| csv.column("y_true"));
    if require_y && ycol.is_none() {
        return Err(CliError::schema(path, "missing column `y`"));
    }
    let idcol = ["id", "cell_id", "location_id"]
        .iter()
        .find_map(|c| csv.column(c));
    let pred_cols: Vec<usize> = (0..csv.header.len())
        .filter(|c| !RESERVED.contains(&csv.header[*c].as_str()))
        .collect();
    let n = csv.rows.len();
    let ids = (0..n)
        .map(|r| match idcol {
            Some(c) => csv.rows[r][c].to_string(),
            None => r.to_string(),
        })
        .collect();
    let xs = csv.f64_column(path, sx)?;
    let ys = csv.f64_column(path, sy)?;
    let coords = Coordinates::new(xs.into_iter().zip(ys).map(|(a, b)| [a, b]).collect())
        .map_err(|e| CliError::schema(path, e.to_string()))?;
    let y = ycol.map(|c| csv.f64_column(path, c)).transpose()?;
    let mut z = Matrix::zeros(n, pred_cols.len());
    for r in 0..n {
        for (j, &c) in pred_cols.iter().enumerate() {
            z[(r, j)] = csv.f64_at(path, r, c)?;
        }
    }
    Ok(Table {
        ids,
        coords,
        y,
        labels: pred_cols.iter().map(|c| csv.header[*c].clone()).collect(),
        z,
    })
}

/// Reads 0-based row indices from the `index` column.
pub fn read_indices(path: &Path, n_rows: usize) -> CliResult<Vec<usize>> {
    let csv = read_csv(path)?;
    let c = csv.require(path, "index")?;
    let mut out = Vec::with_capacity(csv.rows.len());
    let mut seen = HashSet::new();
    for (r, rec) in csv.rows.iter().enumerate() {
        let i: usize = rec[c].parse().map_err(|_| {
            CliError::schema(path, format!("row {}, column `index`: not an index", r + 1))
        })?;
        if i >= n_rows {
            return Err(CliError::schema(
                path,
                format!("row {}: index {i} out of range", r + 1),
            ));
        }
        if !seen.insert(i) {
            return Err(CliError::schema(
                path,
                format!("row {}: duplicate index {i}", r + 1),
            ));
        }
        out.push(i);
    }
    Ok(out)
}

pub fn write_indices(path: &Path, idx: &[usize]) -> CliResult<()> {
    let mut out = CsvOut::new(&["index"]);
    for i in idx {
        out.row(&[i.to_string()]);
    }
    out.save(path)
}

pub fn chain_header(p: usize) -> Vec<String> {
    let mut h = vec!["iter".to_string()];
    h.extend((0..=p).map(|i| format!("beta_{i}")));
    h.extend(["alpha0", "alpha1", "tau2", "sigma2", "phi", "accepted"].map(String::from));
    h
}

pub fn write_chain(path: &Path, states: &[ModelState], accepted: &[bool]) -> CliResult<()> {
    let p = states.first().map_or(0, |s| s.beta.len().saturating_sub(1));
    let mut out = CsvOut::new(&chain_header(p));
    for (i, s) in states.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(s.beta.iter().map(|v| fmt_f64(*v)));
        row.extend(
            [
                s.alpha0,
                s.alpha1,
                s.theta.tau2,
                s.theta.sigma2,
                s.theta.phi,
            ]
            .map(fmt_f64),
        );
        row.push(u8::from(accepted.get(i).copied().unwrap_or(false)).to_string());
        out.row(&row);
    }
    out.save(path)
}

/// Chain rows as states and acceptance flags.
pub fn read_chain(path: &Path) -> CliResult<(Vec<ModelState>, Vec<bool>)> {
    let csv = read_csv(path)?;
    let n_beta = csv.header.iter().filter(|h| h.starts_with("beta_")).count();
    if n_beta == 0 {
        return Err(CliError::schema(path, "missing column `beta_0`"));
    }
    let beta_cols = (0..n_beta)
        .map(|i| csv.require(path, &format!("beta_{i}")))
        .collect::<CliResult<Vec<_>>>()?;
    let named = ["alpha0", "alpha1", "tau2", "sigma2", "phi", "accepted"]
        .iter()
        .map(|n| csv.require(path, n))
        .collect::<CliResult<Vec<_>>>()?;
    let mut states = Vec::with_capacity(csv.rows.len());
    let mut accepted = Vec::with_capacity(csv.rows.len());
    for r in 0..csv.rows.len() {
        let beta = Vector::from_iterator(
            n_beta,
            beta_cols
                .iter()
                .map(|c| csv.f64_at(path, r, *c))
                .collect::<CliResult<Vec<_>>>()?,
        );
        let v = |k: usize| csv.f64_at(path, r, named[k]);
        states.push(ModelState {
            beta,
            alpha0: v(0)?,
            alpha1: v(1)?,
            theta: SpatialParams {
                tau2: v(2)?,
                sigma2: v(3)?,
                phi: v(4)?,
            },
        });
        accepted.push(v(5)? != 0.0);
    }
    Ok((states, accepted))
}

pub const PREDICTION_HEADER: [&str; 9] = [
    "location_id",
    "s_x",
    "s_y",
    "y_true",
    "y_pred_mean",
    "y_pred_median",
    "ci_low",
    "ci_high",
    "level",
];

/// Writes predictions; the `y_true` column is present only with a truth.
pub fn write_predictions(
    path: &Path,
    results: &[PredictionResult],
    coords: &Coordinates,
    truth: Option<&[f64]>,
) -> CliResult<()> {
    let header: Vec<&str> = PREDICTION_HEADER
        .iter()
        .copied()
        .filter(|h| truth.is_some() || *h != "y_true")
        .collect();
    let mut out = CsvOut::new(&header);
    for (j, r) in results.iter().enumerate() {
        let [sx, sy] = coords.points[j];
        let mut row = vec![r.location_id.clone(), fmt_f64(sx), fmt_f64(sy)];
        if let Some(t) = truth {
            row.push(fmt_f64(t[j]));
        }
        row.extend([r.mean, r.median, r.ci_low, r.ci_high, r.level].map(fmt_f64));
        out.row(&row);
    }
    out.save(path)
}

/// Prediction summaries and their truths.
pub fn read_predictions(path: &Path) -> CliResult<(Vec<PredictionResult>, Option<Vec<f64>>)> {
    let csv = read_csv(path)?;
    let id = csv.require(path, "location_id")?;
    let cols = ["y_pred_mean", "y_pred_median", "ci_low", "ci_high", "level"]
        .iter()
        .map(|n| csv.require(path, n))
        .collect::<CliResult<Vec<_>>>()?;
    let truth = csv
        .column("y_true")
        .map(|c| csv.f64_column(path, c))
        .transpose()?;
    let mut out = Vec::with_capacity(csv.rows.len());
    for r in 0..csv.rows.len() {
        let v = |k: usize| csv.f64_at(path, r, cols[k]);
        out.push(PredictionResult {
            location_id: csv.rows[r][id].to_string(),
            samples: Vec::new(),
            mean: v(0)?,
            median: v(1)?,
            ci_low: v(2)?,
            ci_high: v(3)?,
            level: v(4)?,
        });
    }
    Ok((out, truth))
}
