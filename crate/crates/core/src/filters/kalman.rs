//! Exact likelihood for linear-Gaussian models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Dataset;

/// `x_0 ~ N(m0, p0)`, `x_t = A x_{t-1} + N(0, Q)`, `y_t = P x_t + N(0, S)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianSpec {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

impl LinearGaussianSpec {
    fn check(&self) -> Result<()> {
        let d = self.m0.len();
        let dy = self.p.nrows();
        let shapes = [
            ("transition matrix", self.a.shape(), (d, d)),
            ("process covariance", self.q.shape(), (d, d)),
            ("observation matrix", self.p.shape(), (dy, d)),
            ("observation covariance", self.s.shape(), (dy, dy)),
            ("initial covariance", self.p0.shape(), (d, d)),
        ];
        for (what, got, expected) in shapes {
            if got != expected {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: expected.0 * expected.1,
                    got: got.0 * got.1,
                });
            }
        }
        Ok(())
    }
}

/// Predicted and filtered moments at one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanStep {
    pub predicted_mean: DVector<f64>,
    pub predicted_cov: DMatrix<f64>,
    pub filtered_mean: DVector<f64>,
    pub filtered_cov: DMatrix<f64>,
    pub log_factor: f64,
}

/// Runs the prediction-update recursion, returning one record per observation.
///
/// An observation at time 0 is conditioned on the initial distribution
/// directly; every later one follows a single transition.
pub fn kalman_filter(spec: &LinearGaussianSpec, data: &Dataset) -> Result<Vec<KalmanStep>> {
    spec.check()?;
    if data.obs_dim() != spec.p.nrows() {
        return Err(Error::DimensionMismatch {
            what: "dataset observation dimension",
            expected: spec.p.nrows(),
            got: data.obs_dim(),
        });
    }
    let mut mean = spec.m0.clone();
    let mut cov = spec.p0.clone();
    let mut out = Vec::with_capacity(data.len());
    for (k, y) in data.observations().iter().enumerate() {
        if k > 0 || !data.has_initial() {
            mean = &spec.a * mean;
            cov = &spec.a * cov * spec.a.transpose() + &spec.q;
        }
        let innov_cov = &spec.p * &cov * spec.p.transpose() + &spec.s;
        let chol = innov_cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularCovariance("innovation covariance".into()))?;
        let resid = y - &spec.p * &mean;
        let log_factor = linalg::gaussian_logpdf_chol(&resid, &chol);
        let pc = &spec.p * &cov;
        let gain = chol.solve(&pc).transpose();
        let filtered_mean = &mean + &gain * resid;
        let filtered_cov = &cov - &gain * pc;
        let filtered_cov = (&filtered_cov + filtered_cov.transpose()) * 0.5;
        out.push(KalmanStep {
            predicted_mean: mean.clone(),
            predicted_cov: cov.clone(),
            filtered_mean: filtered_mean.clone(),
            filtered_cov: filtered_cov.clone(),
            log_factor,
        });
        mean = filtered_mean;
        cov = filtered_cov;
    }
    Ok(out)
}

/// Exact log-likelihood of `data`.
pub fn kalman_loglik(spec: &LinearGaussianSpec, data: &Dataset) -> Result<f64> {
    Ok(kalman_filter(spec, data)?.iter().map(|s| s.log_factor).sum())
}
