//! Small dense linear-algebra helpers shared by the filters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Factorizes a symmetric matrix, retrying with diagonal jitter
/// `1e-10 * trace / d`, escalated by factors of 10 up to `1e-6 * trace / d`.
pub(crate) fn cholesky_jittered(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let d = m.nrows();
    let scale = m.trace() / d as f64;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::SingularCovariance(context.to_string()));
    }
    let mut jitter = 1e-10;
    while jitter <= 1e-6 * (1.0 + 1e-12) {
        let mut mj = m.clone();
        for i in 0..d {
            mj[(i, i)] += jitter * scale;
        }
        if let Some(c) = mj.cholesky() {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::SingularCovariance(context.to_string()))
}

pub(crate) fn chol_log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// `log N(resid; 0, LL')` given the factor of the covariance.
pub(crate) fn gaussian_logpdf_chol(resid: &DVector<f64>, c: &Cholesky<f64, Dyn>) -> f64 {
    let d = resid.len() as f64;
    let z = c
        .l_dirty()
        .solve_lower_triangular(resid)
        .expect("cholesky factor has a positive diagonal");
    -0.5 * (d * LN_2PI + chol_log_det(c) + z.norm_squared())
}

/// Square root `R` with `R R' = m` for a symmetric PSD matrix. Falls back to
/// the eigen-decomposition when `m` is singular (e.g. zero observation noise).
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c.unpack());
    }
    let eig = SymmetricEigen::new(m.clone());
    let tol = -1e-10 * eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&v| v < tol || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "covariance matrix is not positive semidefinite".into(),
        ));
    }
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Sample mean and covariance (divisor `n - 1`) of the columns of a
/// column-major `d x n` slice.
pub(crate) fn sample_moments(data: &[f64], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = data.len() / d;
    let mut mean = DVector::zeros(d);
    for col in data.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(col) {
            *m += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for col in data.chunks_exact(d) {
        for i in 0..d {
            let di = col[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (col[j] - mean[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn jitter_rescues_rank_deficient_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(m.clone().cholesky().is_none());
        assert!(cholesky_jittered(&m, "test").is_ok());
    }

    #[test]
    fn zero_matrix_is_singular() {
        let m = DMatrix::zeros(2, 2);
        assert!(matches!(
            cholesky_jittered(&m, "test"),
            Err(Error::SingularCovariance(_))
        ));
    }

    #[test]
    fn psd_sqrt_handles_zero_and_full_rank() {
        let z = psd_sqrt(&DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(z, DMatrix::zeros(2, 2));
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let r = psd_sqrt(&m).unwrap();
        assert_relative_eq!(&r * r.transpose(), m, epsilon = 1e-12);
    }

    #[test]
    fn moments_use_unbiased_divisor() {
        let (m, c) = sample_moments(&[1.0, 2.0, 3.0, 4.0], 1);
        assert_relative_eq!(m[0], 2.5);
        assert_relative_eq!(c[(0, 0)], 5.0 / 3.0);
    }
}
