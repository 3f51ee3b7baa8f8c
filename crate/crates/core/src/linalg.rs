use num_traits::Float;

use crate::{Error, Matrix, Result, Vector};

/// Solves `L x = b` for lower-triangular `L`.
pub(crate) fn lower_solve_vec(l: &Matrix, b: &Vector) -> Result<Vector> {
    l.solve_lower_triangular(b).ok_or(Error::SingularFactor)
}

/// Solves `L X = B` for lower-triangular `L`.
pub(crate) fn lower_solve(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    l.solve_lower_triangular(b).ok_or(Error::SingularFactor)
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub(crate) fn lower_t_solve_vec(l: &Matrix, b: &Vector) -> Result<Vector> {
    l.tr_solve_lower_triangular(b).ok_or(Error::SingularFactor)
}

/// Sample mean and covariance (divisor n − 1) of the rows of `rows`.
pub(crate) fn sample_mean_cov(rows: &[Vector]) -> (Vector, Matrix) {
    let d = rows.first().map_or(0, |r| r.len());
    let n = rows.len();
    let mut mean = Vector::zeros(d);
    for r in rows {
        mean += r;
    }
    mean /= n.max(1) as f64;
    let mut cov = Matrix::zeros(d, d);
    for r in rows {
        let c = r - &mean;
        cov += &c * c.transpose();
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    (mean, cov)
}

/// Relative Frobenius distance ‖a − b‖ / max(‖b‖, tiny).
#[allow(dead_code)]
pub(crate) fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::min_positive_value())
}

/// Euclidean norm that works under `no_std`.
#[allow(dead_code)]
pub(crate) fn hypot(dx: f64, dy: f64) -> f64 {
    Float::sqrt(dx * dx + dy * dy)
}
