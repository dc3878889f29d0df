//! Likelihood estimators for a fixed parameter value.

mod bpf;
mod enkf;
mod gaussian;
mod kalman;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ParamVector, SsmModel};
use crate::rng::RngStream;

pub use bpf::bpf_loglik;
pub use enkf::{
    enkf_block_layout, enkf_loglik, enkf_loglik_rqmc, enkf_moments_pseudo, enkf_moments_rqmc,
    EnkfNoise, PendingShift,
};
pub(crate) use enkf::{run_enkf, Noise};
pub use gaussian::{kalman_gain, unbiased_gaussian_logpdf};
pub use kalman::{kalman_filter, kalman_loglik, KalmanStep, LinearGaussianSpec};

/// Density used for the per-step likelihood factor of the ensemble filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    /// `N(y; P mu, P Sigma P' + S)` evaluated at the sample moments.
    Plugin,
    /// Unbiased estimate of the same density from the pseudo-observations.
    Unbiased,
}

/// Which estimator produced a likelihood value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Bpf,
    Enkf,
    EnkfUnbiased,
    KalmanExact,
}

/// A log-likelihood estimate with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLikelihoodEstimate {
    /// `-inf` means a zero estimate, i.e. certain rejection.
    pub value: f64,
    pub estimator: EstimatorKind,
    pub n: usize,
    /// Observation factors folded into `value`.
    pub factors: usize,
    /// Single-member evolution calls spent.
    pub evolutions: u64,
}

impl LogLikelihoodEstimate {
    pub fn is_zero(&self) -> bool {
        self.value == f64::NEG_INFINITY
    }
}

/// Members of a particle system, each a contiguous `dim`-vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    dim: usize,
    members: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl Ensemble {
    pub fn new(dim: usize, members: Vec<f64>) -> Result<Self> {
        if dim == 0 || members.is_empty() || !members.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "ensemble of {} values does not split into members of dimension {dim}",
                members.len()
            )));
        }
        Ok(Self {
            dim,
            members,
            weights: None,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "ensemble weights",
                expected: self.len(),
                got: weights.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("weights must be nonnegative and sum to one".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.members.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, i: usize) -> &[f64] {
        &self.members[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.members
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Sample mean and covariance (divisor `N - 1`).
    pub fn moments(&self) -> ForecastMoments {
        let (mean, cov) = crate::linalg::sample_moments(&self.members, self.dim);
        ForecastMoments { mean, cov }
    }
}

/// Sample mean and covariance of a forecast ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// A likelihood estimator and its size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Estimator {
    Bpf { n: usize },
    Enkf { n: usize, density: DensityKind },
    EnkfRqmc { n: usize },
    Kalman,
}

impl Estimator {
    pub fn particles(&self) -> usize {
        match *self {
            Estimator::Bpf { n } | Estimator::Enkf { n, .. } | Estimator::EnkfRqmc { n } => n,
            Estimator::Kalman => 0,
        }
    }

    pub fn with_particles(&self, n: usize) -> Self {
        match *self {
            Estimator::Bpf { .. } => Estimator::Bpf { n },
            Estimator::Enkf { density, .. } => Estimator::Enkf { n, density },
            Estimator::EnkfRqmc { .. } => Estimator::EnkfRqmc { n },
            Estimator::Kalman => Estimator::Kalman,
        }
    }

    pub fn kind(&self) -> EstimatorKind {
        match *self {
            Estimator::Bpf { .. } => EstimatorKind::Bpf,
            Estimator::Enkf {
                density: DensityKind::Unbiased,
                ..
            } => EstimatorKind::EnkfUnbiased,
            Estimator::Enkf { .. } | Estimator::EnkfRqmc { .. } => EstimatorKind::Enkf,
            Estimator::Kalman => EstimatorKind::KalmanExact,
        }
    }

    /// Checks that `model` supports this estimator.
    pub fn validate(&self, model: &dyn SsmModel) -> Result<()> {
        let unsupported = |feature| Error::Unsupported {
            model: model.name().to_string(),
            feature,
        };
        match *self {
            Estimator::Bpf { n: 0 } => {
                Err(Error::InvalidArgument("particle filter needs at least one particle".into()))
            }
            Estimator::Enkf { n, density } => {
                if n < 2 {
                    return Err(Error::InvalidArgument("ensemble filter needs at least two members".into()));
                }
                if density == DensityKind::Unbiased && n <= model.obs_dim() + 3 {
                    return Err(Error::InvalidArgument(format!(
                        "unbiased density needs more than {} members",
                        model.obs_dim() + 3
                    )));
                }
                Ok(())
            }
            Estimator::EnkfRqmc { n } => {
                if n < 2 {
                    return Err(Error::InvalidArgument("ensemble filter needs at least two members".into()));
                }
                let m = model
                    .normal_draw_count()
                    .ok_or_else(|| unsupported("quasi-Monte Carlo evolution"))?;
                let dim = m + model.obs_dim();
                if dim > crate::rng::MAX_SOBOL_DIM {
                    return Err(Error::SobolDimension {
                        requested: dim,
                        max: crate::rng::MAX_SOBOL_DIM,
                    });
                }
                Ok(())
            }
            Estimator::Kalman => {
                let probe = model.true_params();
                model
                    .linear_gaussian(&probe)
                    .map(|_| ())
                    .ok_or_else(|| unsupported("exact Kalman likelihood"))
            }
            Estimator::Bpf { .. } => Ok(()),
        }
    }

    /// One likelihood estimate at `theta`, drawing randomness from `stream`.
    pub fn estimate(
        &self,
        model: &dyn SsmModel,
        theta: &ParamVector,
        data: &Dataset,
        stream: &mut RngStream,
    ) -> Result<LogLikelihoodEstimate> {
        match *self {
            Estimator::Bpf { n } => bpf_loglik(model, theta, data, n, stream),
            Estimator::Enkf { n, density } => {
                enkf_loglik(model, theta, data, n, EnkfNoise::Stream(stream), density)
            }
            Estimator::EnkfRqmc { n } => enkf_loglik_rqmc(model, theta, data, n, stream),
            Estimator::Kalman => {
                let spec = model.linear_gaussian(theta).ok_or_else(|| Error::Unsupported {
                    model: model.name().to_string(),
                    feature: "exact Kalman likelihood",
                })?;
                Ok(LogLikelihoodEstimate {
                    value: kalman_loglik(&spec, data)?,
                    estimator: EstimatorKind::KalmanExact,
                    n: 0,
                    factors: data.len(),
                    evolutions: 0,
                })
            }
        }
    }
}
