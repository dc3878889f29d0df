//! Gaussian building blocks of the ensemble filter: the sample Kalman gain
//! and an exactly unbiased estimator of a Gaussian density.

use nalgebra::{DMatrix, DVector};

use super::ForecastMoments;
use crate::error::{Error, Result};
use crate::linalg::{self, LN_2PI};
use crate::model::ObsModel;

/// `K = Sigma P' (P Sigma P' + S)^{-1}` via a Cholesky solve.
pub fn kalman_gain(moments: &ForecastMoments, obs: &ObsModel) -> Result<DMatrix<f64>> {
    let d = moments.mean.len();
    if moments.cov.shape() != (d, d) || obs.state_dim() != d {
        return Err(Error::DimensionMismatch {
            what: "forecast covariance",
            expected: obs.state_dim(),
            got: moments.cov.nrows(),
        });
    }
    let ps = &obs.p * &moments.cov;
    let innov = &ps * obs.p.transpose() + &obs.s;
    let chol = linalg::cholesky_jittered(&innov, "innovation covariance")?;
    Ok(chol.solve(&ps).transpose())
}

fn log_c(k: usize, v: f64) -> f64 {
    let kf = k as f64;
    -0.5 * kf * v * std::f64::consts::LN_2
        - 0.25 * kf * (kf - 1.0) * std::f64::consts::PI.ln()
        - (1..=k).map(|i| libm::lgamma(0.5 * (v - i as f64 + 1.0))).sum::<f64>()
}

/// Log of the unbiased Gaussian density estimate at `y`, given the sample
/// mean and covariance (divisor `n - 1`) of `n` draws from that Gaussian.
///
/// Returns `-inf` when `M - (y - mean)(y - mean)'/(1 - 1/n)` is not positive
/// definite, where `M = (n - 1) cov`. Requires `n > d + 3`.
pub fn unbiased_gaussian_logpdf(
    y: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    n: usize,
) -> Result<f64> {
    let d = y.len();
    if mean.len() != d || cov.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            what: "sample moments",
            expected: d,
            got: mean.len(),
        });
    }
    if n <= d + 3 {
        return Err(Error::InvalidArgument(format!(
            "unbiased density estimate needs n > d + 3 (n = {n}, d = {d})"
        )));
    }
    let nf = n as f64;
    let df = d as f64;
    let shrink = 1.0 - 1.0 / nf;
    let m = cov * (nf - 1.0);
    let r = y - mean;
    let a = &m - (&r * r.transpose()) / shrink;
    let Some(chol_a) = a.cholesky() else {
        return Ok(f64::NEG_INFINITY);
    };
    let chol_m = m
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("scaled sample covariance".into()))?;
    Ok(-0.5 * df * LN_2PI + log_c(d, nf - 2.0)
        - log_c(d, nf - 1.0)
        - 0.5 * df * shrink.ln()
        - 0.5 * (nf - df - 2.0) * linalg::chol_log_det(&chol_m)
        + 0.5 * (nf - df - 3.0) * linalg::chol_log_det(&chol_a))
}
