//! Small dense linear-algebra helpers shared by the filters and fusion code.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SymmetricEigen, Vector2, Vector4};

pub type State = Vector4<f64>;
pub type Cov4 = Matrix4<f64>;
pub type Pos = Vector2<f64>;

pub fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

pub fn symmetrize4(p: &Cov4) -> Cov4 {
    (p + p.transpose()) * 0.5
}

pub fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    if p.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(p.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_asymmetry(p: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            worst = worst.max((p[(i, j)] - p[(j, i)]).abs());
        }
    }
    worst
}

/// log N(x; mean, cov) for a symmetric positive-definite `cov`.
pub fn gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let d = x.len() as f64;
    let chol = cov.clone().cholesky()?;
    let diff = x - mean;
    let y = chol.l().solve_lower_triangular(&diff)?;
    let logdet: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    Some(-0.5 * (y.dot(&y) + logdet + d * (2.0 * PI).ln()))
}

pub fn gaussian_logpdf4(x: &State, mean: &State, cov: &Cov4) -> Option<f64> {
    let chol = cov.cholesky()?;
    let diff = x - mean;
    let y = chol.l().solve_lower_triangular(&diff)?;
    let logdet: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    Some(-0.5 * (y.dot(&y) + logdet + 4.0 * (2.0 * PI).ln()))
}

pub fn gaussian_logpdf2(x: &Pos, mean: &Pos, cov: &Matrix2<f64>) -> Option<f64> {
    let det = cov.determinant();
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let inv = cov.try_inverse()?;
    let diff = x - mean;
    let q = (diff.transpose() * inv * diff)[(0, 0)];
    Some(-0.5 * (q + det.ln() + 2.0 * (2.0 * PI).ln()))
}

pub fn mahalanobis2(diff: &Pos, cov: &Matrix2<f64>) -> Option<f64> {
    let inv = cov.try_inverse()?;
    Some((diff.transpose() * inv * diff)[(0, 0)])
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

pub fn cov_to_rows(c: &Cov4) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = c[(i, j)];
        }
    }
    out
}

pub fn cov_from_rows(rows: &[[f64; 4]; 4]) -> Cov4 {
    Cov4::from_fn(|i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_half_open() {
        assert!((wrap_angle(PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn logpdf_standard_normal_at_mean() {
        let x = DVector::zeros(4);
        let v = gaussian_logpdf(&x, &x, &DMatrix::identity(4, 4)).unwrap();
        assert!((v + 2.0 * (2.0 * PI).ln()).abs() < 1e-12);
        let s = State::zeros();
        let v4 = gaussian_logpdf4(&s, &s, &Cov4::identity()).unwrap();
        assert!((v - v4).abs() < 1e-14);
    }

    #[test]
    fn lse_handles_infinities() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }
}
