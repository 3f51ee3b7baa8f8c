//! Predictor standardization and the principal-component design matrix.
//!
//! The basis is built from the full predictor matrix (training and prediction
//! locations together); design rows for any subset are then
//! `[1, z_std · V]`.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::{Error, Matrix, Result, Vector};

/// Standard deviations below this are treated as constant columns.
pub const MIN_COLUMN_SD: f64 = 1e-12;
/// All singular values below this absolute level mean a zero matrix.
pub const MIN_SINGULAR_VALUE: f64 = 1e-14;
/// Default relative truncation tolerance for singular values.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Raw predictor matrix, one row per location.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPredictors {
    pub values: Matrix,
    pub labels: Vec<String>,
}

impl RawPredictors {
    pub fn new(values: Matrix, labels: Vec<String>) -> Result<Self> {
        if labels.len() != values.ncols() {
            return Err(Error::DimensionMismatch {
                what: "predictor labels",
                expected: values.ncols(),
                found: labels.len(),
            });
        }
        if values.nrows() < 2 {
            return Err(Error::Empty("at least two predictor rows are required"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("predictors must be finite"));
        }
        Ok(Self { values, labels })
    }

    /// Predictors with generated labels `z_1..z_p`.
    pub fn unlabeled(values: Matrix) -> Result<Self> {
        let labels = (1..=values.ncols())
            .map(|i| alloc::format!("z_{i}"))
            .collect();
        Self::new(values, labels)
    }
}

/// Column means and sample standard deviations used for scaling.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScalingParams {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl ScalingParams {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    /// Scales one raw row.
    pub fn apply(&self, z: &[f64]) -> Result<Vector> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "raw predictor row",
                expected: self.dim(),
                found: z.len(),
            });
        }
        Ok(Vector::from_iterator(
            z.len(),
            z.iter()
                .zip(self.means.iter().zip(&self.sds))
                .map(|(v, (m, s))| (v - m) / s),
        ))
    }

    /// Scales every row of a raw matrix.
    pub fn apply_matrix(&self, z: &Matrix) -> Result<Matrix> {
        if z.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "raw predictor columns",
                expected: self.dim(),
                found: z.ncols(),
            });
        }
        let mut out = z.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - self.means[j]) / self.sds[j]);
        }
        Ok(out)
    }
}

/// Centers each column and divides by its sample standard deviation.
pub fn standardize(raw: &RawPredictors) -> Result<(Matrix, ScalingParams)> {
    let z = &raw.values;
    let n = z.nrows() as f64;
    let mut means = Vec::with_capacity(z.ncols());
    let mut sds = Vec::with_capacity(z.ncols());
    for (j, col) in z.column_iter().enumerate() {
        let mean = col.sum() / n;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = Float::sqrt(ss / (n - 1.0));
        if !(sd >= MIN_COLUMN_SD) {
            return Err(Error::ConstantColumn(raw.labels[j].clone()));
        }
        means.push(mean);
        sds.push(sd);
    }
    let params = ScalingParams { means, sds };
    let scaled = params.apply_matrix(z)?;
    Ok((scaled, params))
}

/// Right singular vectors of the standardized predictors, truncated where the
/// singular values vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    /// `p_raw × p_kept`, orthonormal columns.
    pub v: Matrix,
    /// Non-increasing, length `p_kept`.
    pub singular_values: Vec<f64>,
    pub rel_tol: f64,
}

impl PcaBasis {
    pub fn p_raw(&self) -> usize {
        self.v.nrows()
    }

    pub fn p_kept(&self) -> usize {
        self.v.ncols()
    }
}

/// Singular value decomposition of `standardized`, keeping the right singular
/// vectors whose singular value exceeds `rel_tol · s_max`.
///
/// Each kept vector is sign-normalized so that its largest-magnitude entry is
/// positive, which makes the basis reproducible across platforms.
pub fn compute_basis(standardized: &Matrix, rel_tol: f64) -> Result<PcaBasis> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidParam("rel_tol must lie in (0, 1)"));
    }
    if standardized.is_empty() {
        return Err(Error::Empty("predictor matrix"));
    }
    if standardized.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("predictors must be finite"));
    }
    let mut svd = standardized.clone().svd(false, true);
    svd.sort_by_singular_values();
    let s = &svd.singular_values;
    let v_t = svd.v_t.as_ref().ok_or(Error::DegenerateInput)?;
    let s_max = s.max();
    if !(s_max >= MIN_SINGULAR_VALUE) {
        return Err(Error::DegenerateInput);
    }
    let kept: Vec<usize> = (0..s.len()).filter(|&i| s[i] > rel_tol * s_max).collect();
    let p = standardized.ncols();
    let mut v = Matrix::zeros(p, kept.len());
    for (c, &i) in kept.iter().enumerate() {
        let row = v_t.row(i);
        let pivot = row
            .iter()
            .copied()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..p {
            v[(r, c)] = sign * row[r];
        }
    }
    Ok(PcaBasis {
        v,
        singular_values: kept.iter().map(|&i| s[i]).collect(),
        rel_tol,
    })
}

/// Principal-component design matrix `[1 | Z V]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: Matrix,
}

impl DesignMatrix {
    /// Wraps an existing matrix whose first column must be all ones.
    pub fn from_matrix(x: Matrix) -> Result<Self> {
        if x.ncols() == 0 || x.column(0).iter().any(|v| *v != 1.0) {
            return Err(Error::InvalidParam("first design column must be ones"));
        }
        Ok(Self { x })
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    /// Number of components, excluding the intercept.
    pub fn p(&self) -> usize {
        self.x.ncols() - 1
    }

    /// Intercept and the first `k` components.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            x: self.x.columns(0, k + 1).into_owned(),
        }
    }

    /// Design rows for the listed observations.
    pub fn rows(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
        }
    }

    pub fn row(&self, i: usize) -> Vector {
        self.x.row(i).transpose()
    }
}

/// Builds `[1 | subset · V]` for already-standardized rows.
pub fn build_design(standardized_subset: &Matrix, basis: &PcaBasis) -> Result<DesignMatrix> {
    if standardized_subset.ncols() != basis.p_raw() {
        return Err(Error::DimensionMismatch {
            what: "standardized predictor columns",
            expected: basis.p_raw(),
            found: standardized_subset.ncols(),
        });
    }
    let n = standardized_subset.nrows();
    let scores = standardized_subset * &basis.v;
    let mut x = Matrix::zeros(n, basis.p_kept() + 1);
    x.column_mut(0).fill(1.0);
    x.columns_mut(1, basis.p_kept()).copy_from(&scores);
    Ok(DesignMatrix { x })
}

/// Design row `[1, scale(z_new) · V]` for a raw predictor vector.
pub fn transform_new(
    z_new_raw: &[f64],
    scaling: &ScalingParams,
    basis: &PcaBasis,
) -> Result<Vector> {
    if z_new_raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("predictors must be finite"));
    }
    if scaling.dim() != basis.p_raw() {
        return Err(Error::DimensionMismatch {
            what: "scaling vs basis",
            expected: basis.p_raw(),
            found: scaling.dim(),
        });
    }
    let z = scaling.apply(z_new_raw)?;
    let scores = basis.v.tr_mul(&z);
    let mut out = Vector::zeros(basis.p_kept() + 1);
    out[0] = 1.0;
    out.rows_mut(1, basis.p_kept()).copy_from(&scores);
    Ok(out)
}

/// Standardizes the full raw matrix, builds the basis and the full design.
pub fn full_design(
    raw: &RawPredictors,
    rel_tol: f64,
) -> Result<(DesignMatrix, ScalingParams, PcaBasis)> {
    let (z, scaling) = standardize(raw)?;
    let basis = compute_basis(&z, rel_tol)?;
    let design = build_design(&z, &basis)?;
    Ok((design, scaling, basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn random_matrix(n: usize, p: usize, seed: u64) -> Matrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, p, |_, j| {
            (j as f64 + 1.0) * rng.sample::<f64, _>(StandardNormal) + 3.0 * j as f64
        })
    }

    fn moments(col: &[f64]) -> (f64, f64) {
        let n = col.len() as f64;
        let mut s = 0.0;
        for v in col {
            s += v;
        }
        let m = s / n;
        let mut ss = 0.0;
        for v in col {
            ss += (v - m) * (v - m);
        }
        (m, (ss / (n - 1.0)).sqrt())
    }

    #[test]
    fn three_point_column() {
        let raw =
            RawPredictors::unlabeled(Matrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0])).unwrap();
        let (z, sc) = standardize(&raw).unwrap();
        assert_eq!(z.as_slice(), &[-1.0, 0.0, 1.0]);
        assert_eq!(sc.means, vec![2.0]);
        assert_eq!(sc.sds, vec![1.0]);
    }

    #[test]
    fn standardize_is_idempotent() {
        let raw = RawPredictors::unlabeled(random_matrix(30, 4, 1)).unwrap();
        let (z, _) = standardize(&raw).unwrap();
        let (z2, sc2) = standardize(&RawPredictors::unlabeled(z.clone()).unwrap()).unwrap();
        assert!((&z2 - &z).amax() < 1e-12);
        for j in 0..4 {
            assert!(sc2.means[j].abs() < 1e-12);
            assert!((sc2.sds[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_moments_by_direct_summation() {
        let raw = RawPredictors::unlabeled(random_matrix(50, 5, 2)).unwrap();
        let (z, sc) = standardize(&raw).unwrap();
        for j in 0..5 {
            let col: Vec<f64> = z.column(j).iter().copied().collect();
            let (m, s) = moments(&col);
            assert!(m.abs() < 1e-10);
            assert!((s - 1.0).abs() < 1e-10);
            let raw_col: Vec<f64> = raw.values.column(j).iter().copied().collect();
            let (rm, rs) = moments(&raw_col);
            assert!((sc.means[j] - rm).abs() < 1e-12);
            assert!((sc.sds[j] - rs).abs() < 1e-12);
        }
        // round trip
        let back = sc.apply_matrix(&raw.values).unwrap();
        assert_eq!(back, z);
    }

    #[test]
    fn constant_column_rejected() {
        let mut m = random_matrix(10, 3, 3);
        m.column_mut(1).fill(4.2);
        let raw = RawPredictors::new(m, vec!["a".into(), "flat".into(), "c".into()]).unwrap();
        assert_eq!(standardize(&raw), Err(Error::ConstantColumn("flat".into())));
    }

    #[test]
    fn orthonormal_input_keeps_everything() {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let m = Matrix::from_row_slice(2, 2, &[s, s, -s, s]);
        let b = compute_basis(&m, DEFAULT_REL_TOL).unwrap();
        assert_eq!(b.p_kept(), 2);
        assert!((b.singular_values[0] - b.singular_values[1]).abs() < 1e-12);
    }

    #[test]
    fn rank_one_truncates_to_one() {
        let u = Vector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let v = Vector::from_vec(vec![0.3, 1.0, -1.0]);
        let m = &u * v.transpose();
        let b = compute_basis(&m, 1e-10).unwrap();
        assert_eq!(b.p_kept(), 1);
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        assert_eq!(
            compute_basis(&Matrix::zeros(4, 3), 1e-10),
            Err(Error::DegenerateInput)
        );
        assert!(compute_basis(&Matrix::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn basis_orthonormal_sorted_and_reconstructs() {
        let raw = RawPredictors::unlabeled(random_matrix(40, 6, 4)).unwrap();
        let (z, _) = standardize(&raw).unwrap();
        let b = compute_basis(&z, DEFAULT_REL_TOL).unwrap();
        assert_eq!(b.p_kept(), 6);
        let vtv = b.v.transpose() * &b.v;
        assert!((vtv - Matrix::identity(6, 6)).amax() < 1e-10);
        assert!(b.singular_values.windows(2).all(|w| w[0] >= w[1]));
        let rec = &z * &b.v * b.v.transpose();
        assert!(rel_frobenius(&rec, &z) < 1e-8);
        // U S Vᵀ reconstruction, with U from the scores
        let scores = &z * &b.v;
        let mut u = scores.clone();
        for (j, s) in b.singular_values.iter().enumerate() {
            u.column_mut(j).scale_mut(1.0 / s);
        }
        let utu = u.transpose() * &u;
        assert!((utu - Matrix::identity(6, 6)).amax() < 1e-10);
    }

    #[test]
    fn design_examples() {
        let raw = RawPredictors::unlabeled(random_matrix(25, 4, 5)).unwrap();
        let (design, sc, b) = full_design(&raw, DEFAULT_REL_TOL).unwrap();
        assert!(design.x.column(0).iter().all(|v| *v == 1.0));

        let zero = build_design(&Matrix::zeros(1, 4), &b).unwrap();
        assert_eq!(zero.x.shape(), (1, 5));
        assert_eq!(
            zero.x.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 0.0, 0.0, 0.0, 0.0]
        );

        // full data: component columns exactly orthogonal with decreasing variance
        let comps = design.x.columns(1, 4).into_owned();
        let gram = comps.transpose() * &comps;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(gram[(i, j)].abs() < 1e-9 * gram[(0, 0)]);
                }
            }
        }
        let vars: Vec<f64> = (0..4)
            .map(|j| moments(comps.column(j).as_slice()).1)
            .collect();
        assert!(vars.windows(2).all(|w| w[0] >= w[1] - 1e-12));

        // transform_new consistency
        let row = transform_new(raw.values.row(7).transpose().as_slice(), &sc, &b).unwrap();
        assert!((row - design.row(7)).amax() < 1e-12);
        let at_mean = transform_new(&sc.means, &sc, &b).unwrap();
        assert_eq!(at_mean[0], 1.0);
        assert!(at_mean.rows(1, 4).amax() < 1e-15);
        assert!(matches!(
            build_design(&Matrix::zeros(2, 3), &b),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            transform_new(&[1.0], &sc, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn transform_new_matches_matvec_oracle() {
        let raw = RawPredictors::unlabeled(random_matrix(20, 3, 6)).unwrap();
        let (_, sc, b) = full_design(&raw, DEFAULT_REL_TOL).unwrap();
        let z = [0.7, -1.3, 4.0];
        let got = transform_new(&z, &sc, &b).unwrap();
        for c in 0..b.p_kept() {
            let mut acc = 0.0;
            for r in 0..3 {
                acc += (z[r] - sc.means[r]) / sc.sds[r] * b.v[(r, c)];
            }
            assert!((got[c + 1] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn ols_fitted_values_invariant_under_basis() {
        let raw = RawPredictors::unlabeled(random_matrix(30, 5, 7)).unwrap();
        let (z, _) = standardize(&raw).unwrap();
        let (design, _, _) = full_design(&raw, DEFAULT_REL_TOL).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let y = Vector::from_fn(30, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut plain = Matrix::zeros(30, 6);
        plain.column_mut(0).fill(1.0);
        plain.columns_mut(1, 5).copy_from(&z);
        let fit = |x: &Matrix| {
            let xtx = x.transpose() * x;
            let beta = xtx.cholesky().unwrap().solve(&(x.transpose() * &y));
            x * beta
        };
        assert!((fit(&plain) - fit(&design.x)).amax() < 1e-8);
    }

    proptest! {
        #[test]
        fn round_trip_projection(seed in 0u64..1000, n in 8usize..30, p in 1usize..6) {
            let raw = RawPredictors::unlabeled(random_matrix(n, p, seed)).unwrap();
            let (z, _) = standardize(&raw).unwrap();
            let b = compute_basis(&z, DEFAULT_REL_TOL).unwrap();
            prop_assume!(b.p_kept() == p);
            let rec = &z * &b.v * b.v.transpose();
            prop_assert!(rel_frobenius(&rec, &z) < 1e-8);
        }
    }
}
