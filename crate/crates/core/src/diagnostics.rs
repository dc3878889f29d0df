//! Chain quality measures: multivariate effective sample size, acceptance
//! rate, likelihood-noise probes and efficiency summaries.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{Estimator, EstimatorKind};
use crate::mcmc::ChainTrace;
use crate::model::{Dataset, ParamVector, SsmModel};
use crate::rng::RngStream;

/// Shortest chain accepted by [`multivariate_ess`].
pub const MIN_ESS_SAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct EssReport {
    pub n: usize,
    pub p: usize,
    pub mess: f64,
    pub batch_size: usize,
    /// Sample covariance of the chain.
    pub sample_cov: DMatrix<f64>,
    /// Batch-means estimate of the long-run covariance.
    pub batch_cov: DMatrix<f64>,
}

/// Multivariate ESS `n (det Lambda / det Sigma)^(1/p)` of an `n x p` chain,
/// with non-overlapping batches of size `floor(sqrt(n))`.
pub fn multivariate_ess(chain: &DMatrix<f64>) -> Result<EssReport> {
    let b = (chain.nrows() as f64).sqrt().floor() as usize;
    multivariate_ess_with_batch(chain, b)
}

pub fn multivariate_ess_with_batch(chain: &DMatrix<f64>, batch_size: usize) -> Result<EssReport> {
    let (n, p) = chain.shape();
    if n < MIN_ESS_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "effective sample size needs at least {MIN_ESS_SAMPLES} samples, got {n}"
        )));
    }
    if p == 0 {
        return Err(Error::InvalidArgument("chain has no parameters".into()));
    }
    let b = batch_size;
    let a = n.checked_div(b).unwrap_or(0);
    if b < 1 || a < 2 {
        return Err(Error::InvalidArgument(format!("batch size {b} leaves fewer than two batches")));
    }
    if chain.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("chain contains non-finite values".into()));
    }

    let mean: DVector<f64> = chain.row_mean().transpose();
    let mut centered = chain.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let sample_cov = centered.transpose() * &centered / (n - 1) as f64;

    let used = chain.rows(0, a * b);
    let grand: DVector<f64> = used.row_mean().transpose();
    let mut batch_cov = DMatrix::zeros(p, p);
    for k in 0..a {
        let bm: DVector<f64> = chain.rows(k * b, b).row_mean().transpose() - &grand;
        batch_cov += &bm * bm.transpose();
    }
    batch_cov *= b as f64 / (a - 1) as f64;

    let log_det = |m: &DMatrix<f64>, what: &str| -> Result<f64> {
        let c = m.clone().cholesky().ok_or_else(|| {
            Error::SingularCovariance(format!("{what}; check for constant or collinear parameters, or run longer"))
        })?;
        Ok(2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    };
    let ld_sample = log_det(&sample_cov, "chain sample covariance")?;
    let ld_batch = log_det(&batch_cov, "batch-means covariance")?;
    let mess = n as f64 * ((ld_sample - ld_batch) / p as f64).exp();
    Ok(EssReport {
        n,
        p,
        mess,
        batch_size: b,
        sample_cov,
        batch_cov,
    })
}

/// Fraction of accepted iterations; 0 for an empty trace.
pub fn acceptance_rate(trace: &ChainTrace) -> f64 {
    if trace.accepted.is_empty() {
        return 0.0;
    }
    trace.accepted.iter().filter(|a| **a).count() as f64 / trace.accepted.len() as f64
}

/// Spread of repeated log-likelihood estimates at one parameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProbe {
    pub replicates: usize,
    /// Replicates that returned `-inf`, excluded from `mean` and `sd`.
    pub zeros: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Summarizes replicate estimates, setting `-inf` values aside.
pub fn noise_from_values(values: &[f64]) -> Result<NoiseProbe> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| *v != f64::NEG_INFINITY).collect();
    if finite.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("log-likelihood replicate is NaN or +inf".into()));
    }
    if finite.is_empty() {
        return Err(Error::Numerical(format!(
            "all {} log-likelihood replicates were -inf; increase the number of particles",
            values.len()
        )));
    }
    let k = finite.len() as f64;
    let constant = finite.iter().all(|v| *v == finite[0]);
    let mean = if constant { finite[0] } else { finite.iter().sum::<f64>() / k };
    let sd = if !constant {
        (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(NoiseProbe {
        replicates: values.len(),
        zeros: values.len() - finite.len(),
        mean,
        sd,
    })
}

/// Standard deviation of `replicates` independent log-likelihood estimates
/// at `theta`; replicate `r` uses `stream.derive(r)`.
pub fn loglik_noise_probe(
    model: &dyn SsmModel,
    data: &Dataset,
    theta: &ParamVector,
    estimator: &Estimator,
    replicates: usize,
    stream: &RngStream,
) -> Result<NoiseProbe> {
    if replicates < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 replicates, got {replicates}")));
    }
    estimator.validate(model)?;
    let values = (0..replicates)
        .map(|r| Ok(estimator.estimate(model, theta, data, &mut stream.derive(r as u64))?.value))
        .collect::<Result<Vec<f64>>>()?;
    noise_from_values(&values)
}

/// One row of an efficiency comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySummary {
    pub filter: EstimatorKind,
    pub n: usize,
    pub tau: Option<f64>,
    pub acceptance_rate: f64,
    pub mess: f64,
    pub wall_time: f64,
    pub mess_per_second: f64,
}

impl EfficiencySummary {
    pub fn new(filter: EstimatorKind, n: usize, tau: Option<f64>, acceptance_rate: f64, mess: f64, wall_time: f64) -> Self {
        let wall_time = wall_time.max(1e-9);
        Self {
            filter,
            n,
            tau,
            acceptance_rate,
            mess,
            wall_time,
            mess_per_second: mess / wall_time,
        }
    }
}

fn filter_label(k: EstimatorKind) -> &'static str {
    match k {
        EstimatorKind::Bpf => "BPF",
        EstimatorKind::Enkf => "EnKF",
        EstimatorKind::EnkfUnbiased => "EnKF-unbiased",
        EstimatorKind::KalmanExact => "Kalman",
    }
}

/// Plain-text table with columns Filter, N, tau, Acc. rate, ESS, Time (s),
/// ESS/Time.
pub fn format_efficiency_table(rows: &[EfficiencySummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10}",
        "Filter", "N", "tau", "Acc. rate", "ESS", "Time (s)", "ESS/Time"
    );
    for r in rows {
        let tau = r.tau.map_or_else(|| "-".to_string(), |t| format!("{t:.2}"));
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>6} {:>10.3} {:>10.1} {:>10.2} {:>10.3}",
            filter_label(r.filter),
            r.n,
            tau,
            r.acceptance_rate,
            r.mess,
            r.wall_time,
            r.mess_per_second
        );
    }
    out
}
