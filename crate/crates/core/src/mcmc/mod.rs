//! Pseudo-marginal Metropolis–Hastings samplers.
//!
//! Every iteration `i` draws from `stream.derive(i)`: child 0 gives the
//! random-walk proposal and then the acceptance uniform, child 1 drives the
//! likelihood estimator and child 2 the Crank–Nicolson refresh of the
//! correlated sampler. Plain and early-rejection chains with the same root
//! stream therefore see identical proposals, uniforms and filter noise.

mod tuning;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{
    enkf_block_layout, enkf_loglik, run_enkf, DensityKind, EnkfNoise, Estimator, EstimatorKind,
    LogLikelihoodEstimate, Noise,
};
use crate::linalg;
use crate::model::{Dataset, ParamVector, SsmModel};
use crate::rng::{crank_nicolson, NormalBlock, RngStream};

pub use tuning::{tune_particles, TuningReport, TuningRow, TARGET_LOGLIK_SD};

/// Attempts at a finite initial likelihood estimate before giving up.
pub const MAX_INIT_ATTEMPTS: usize = 100;

const INIT_LABEL: u64 = u64::MAX;

/// Gaussian random-walk proposal `theta* = theta + N(0, scale * cov)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalSpec {
    cov: DMatrix<f64>,
    scale: f64,
    factor: DMatrix<f64>,
}

impl ProposalSpec {
    /// `cov` must be symmetric positive semi-definite; a zero matrix gives
    /// a proposal that never moves.
    pub fn new(cov: DMatrix<f64>, scale: f64) -> Result<Self> {
        if !cov.is_square() || cov.nrows() == 0 {
            return Err(Error::InvalidArgument("proposal covariance must be a nonempty square matrix".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!("proposal scale must be positive, got {scale}")));
        }
        if !linalg::is_symmetric(&cov, 1e-12) {
            return Err(Error::InvalidArgument("proposal covariance must be symmetric".into()));
        }
        let factor = linalg::psd_sqrt(&(&cov * scale))?;
        Ok(Self { cov, scale, factor })
    }

    pub fn diagonal(sd: &[f64], scale: f64) -> Result<Self> {
        let v: Vec<f64> = sd.iter().map(|s| s * s).collect();
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v)), scale)
    }

    /// The `2.562^2 / d` scaling for a random walk on a `d`-dimensional target.
    pub fn optimal_scale(dim: usize) -> f64 {
        2.562 * 2.562 / dim as f64
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn propose(&self, theta: &[f64], stream: &mut RngStream) -> Vec<f64> {
        let z = nalgebra::DVector::from_vec(stream.standard_normals(self.dim()));
        let step = &self.factor * z;
        theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect()
    }
}

/// Empirical covariance of the samples after `burn_in`, for freezing into a
/// [`ProposalSpec`] after a pilot run.
pub fn pilot_covariance(trace: &ChainTrace, burn_in: usize) -> Result<DMatrix<f64>> {
    let p = trace.dim();
    let kept = trace.samples.get(burn_in..).unwrap_or(&[]);
    if kept.len() < 2 * p.max(1) {
        return Err(Error::InvalidArgument(format!(
            "pilot run kept {} samples, need at least {}",
            kept.len(),
            2 * p.max(1)
        )));
    }
    let flat: Vec<f64> = kept.iter().flatten().copied().collect();
    let (_, cov) = linalg::sample_moments(&flat, p);
    if cov.clone().cholesky().is_none() {
        return Err(Error::SingularCovariance(
            "pilot samples; the pilot chain barely moved, lengthen it or shrink its proposal".into(),
        ));
    }
    Ok(cov)
}

/// Current state of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub theta: ParamVector,
    pub log_like: LogLikelihoodEstimate,
    pub log_prior: f64,
    /// Auxiliary normals behind `log_like`, for the correlated sampler.
    pub u: Option<NormalBlock>,
}

impl ChainState {
    pub fn log_target(&self) -> f64 {
        self.log_like.value + self.log_prior
    }
}

/// What happened in one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub accepted: bool,
    /// Likelihood factors seen before an early rejection; `factors + 1` when
    /// the filter ran to completion, 0 when it never ran.
    pub early_stop: usize,
    pub evolutions: u64,
}

/// Which sampler to run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sampler", rename_all = "kebab-case")]
pub enum Sampler {
    /// Fresh likelihood noise every iteration.
    Pmmh { estimator: Estimator },
    /// Plug-in ensemble filter with early rejection.
    EarlyRejection { n: usize },
    /// Ensemble filter on auxiliary normals refreshed by Crank–Nicolson moves.
    Correlated { n: usize, density: DensityKind, sigma_u: f64 },
}

impl Sampler {
    pub fn particles(&self) -> usize {
        match *self {
            Sampler::Pmmh { estimator } => estimator.particles(),
            Sampler::EarlyRejection { n } | Sampler::Correlated { n, .. } => n,
        }
    }

    pub fn estimator_kind(&self) -> EstimatorKind {
        match *self {
            Sampler::Pmmh { estimator } => estimator.kind(),
            Sampler::EarlyRejection { .. } => EstimatorKind::Enkf,
            Sampler::Correlated { density, .. } => match density {
                DensityKind::Plugin => EstimatorKind::Enkf,
                DensityKind::Unbiased => EstimatorKind::EnkfUnbiased,
            },
        }
    }

    pub fn validate(&self, model: &dyn SsmModel) -> Result<()> {
        match *self {
            Sampler::Pmmh { estimator } => estimator.validate(model),
            Sampler::EarlyRejection { n } => Estimator::Enkf {
                n,
                density: DensityKind::Plugin,
            }
            .validate(model),
            Sampler::Correlated { n, density, sigma_u } => {
                if !(sigma_u > 0.0 && sigma_u <= 1.0) {
                    return Err(Error::InvalidArgument(format!("sigma_u must lie in (0, 1], got {sigma_u}")));
                }
                if model.normal_draw_count().is_none() {
                    return Err(Error::Unsupported {
                        model: model.name().to_string(),
                        feature: "correlated auxiliary normals",
                    });
                }
                Estimator::Enkf { n, density }.validate(model)
            }
        }
    }
}

/// Iteration-by-iteration record of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace {
    pub names: Arc<[String]>,
    pub samples: Vec<Vec<f64>>,
    pub accepted: Vec<bool>,
    pub log_like: Vec<f64>,
    pub log_prior: Vec<f64>,
    pub early_stop: Vec<usize>,
    /// Single-member evolution calls over the whole run, initialization included.
    pub evolutions: u64,
    pub init_attempts: usize,
    /// Set when the run stopped early on an error; the trace holds the
    /// iterations completed before it.
    pub failure: Option<Error>,
}

impl ChainTrace {
    fn new(names: Arc<[String]>, capacity: usize) -> Self {
        Self {
            names,
            samples: Vec::with_capacity(capacity),
            accepted: Vec::with_capacity(capacity),
            log_like: Vec::with_capacity(capacity),
            log_prior: Vec::with_capacity(capacity),
            early_stop: Vec::with_capacity(capacity),
            evolutions: 0,
            init_attempts: 0,
            failure: None,
        }
    }

    fn push(&mut self, state: &ChainState, info: &StepInfo) {
        self.samples.push(state.theta.values().to_vec());
        self.accepted.push(info.accepted);
        self.log_like.push(state.log_like.value);
        self.log_prior.push(state.log_prior);
        self.early_stop.push(info.early_stop);
        self.evolutions += info.evolutions;
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[j]).collect()
    }

    /// Samples from iteration `from` on as an `n x p` matrix.
    pub fn matrix_from(&self, from: usize) -> DMatrix<f64> {
        let kept = self.samples.get(from..).unwrap_or(&[]);
        DMatrix::from_fn(kept.len(), self.dim(), |i, j| kept[i][j])
    }
}

/// Progress reported after every iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Progress {
    pub iteration: usize,
    pub iterations: usize,
    pub accepted: usize,
    pub log_like: f64,
}

fn log_prior_at(model: &dyn SsmModel, theta: &ParamVector) -> f64 {
    let lp = model.log_prior(theta.values());
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Proposal and acceptance uniform for one iteration.
fn propose(state: &ChainState, proposal: &ProposalSpec, iter: &RngStream) -> Result<(ParamVector, f64)> {
    let mut s = iter.derive(0);
    let values = proposal.propose(state.theta.values(), &mut s);
    let log_u = s.uniform().ln();
    Ok((state.theta.with_values(values)?, log_u))
}

fn accepts(log_u: f64, value: f64, lp_star: f64, state: &ChainState) -> bool {
    let value = if value.is_nan() { f64::NEG_INFINITY } else { value };
    log_u < (value + lp_star) - state.log_target()
}

fn rejected(early_stop: usize, evolutions: u64) -> StepInfo {
    StepInfo {
        accepted: false,
        early_stop,
        evolutions,
    }
}

/// One plain pseudo-marginal iteration. A rejected proposal keeps the
/// incumbent estimate; it is never recomputed.
pub fn pmmh_step(
    state: ChainState,
    model: &dyn SsmModel,
    data: &Dataset,
    estimator: &Estimator,
    proposal: &ProposalSpec,
    iter: &RngStream,
) -> Result<(ChainState, StepInfo)> {
    let (theta, log_u) = propose(&state, proposal, iter)?;
    let lp = log_prior_at(model, &theta);
    if lp == f64::NEG_INFINITY {
        return Ok((state, rejected(0, 0)));
    }
    let est = estimator.estimate(model, &theta, data, &mut iter.derive(1))?;
    let info = StepInfo {
        accepted: accepts(log_u, est.value, lp, &state),
        early_stop: data.len() + 1,
        evolutions: est.evolutions,
    };
    if info.accepted {
        Ok((
            ChainState {
                theta,
                log_like: est,
                log_prior: lp,
                u: None,
            },
            info,
        ))
    } else {
        Ok((state, info))
    }
}

/// One ensemble-filter iteration that abandons the filter once the
/// likelihood can no longer reach the acceptance threshold.
///
/// Each plug-in factor is at most `log N(0; 0, S)`, which bounds what the
/// remaining factors can add. The decision always equals that of
/// [`pmmh_step`] with a plug-in ensemble filter of the same size.
pub fn early_rejection_emcmc_step(
    state: ChainState,
    model: &dyn SsmModel,
    data: &Dataset,
    n: usize,
    proposal: &ProposalSpec,
    iter: &RngStream,
) -> Result<(ChainState, StepInfo)> {
    let (theta, log_u) = propose(&state, proposal, iter)?;
    let lp = log_prior_at(model, &theta);
    if lp == f64::NEG_INFINITY {
        return Ok((state, rejected(0, 0)));
    }
    let bound = model.bind(&theta)?;
    let log_b = bound.obs().density()?.log_peak();
    if !log_b.is_finite() {
        return Err(Error::SingularCovariance(
            "observation noise; early rejection needs a nonsingular S, use a variance floor".into(),
        ));
    }
    let total = data.len();
    let threshold = log_u + state.log_target() - lp;
    let mut stop = None;
    let mut monitor = |k: usize, partial: f64| {
        let ub = partial + (total - k) as f64 * log_b;
        let margin = 1e-9 * (ub.abs() + threshold.abs() + 1.0);
        if ub < threshold - margin {
            stop = Some(k);
            false
        } else {
            true
        }
    };
    let out = run_enkf(
        bound.as_ref(),
        model.name(),
        data,
        n,
        DensityKind::Plugin,
        Noise::Stream(&mut iter.derive(1)),
        &mut monitor,
    )?;
    let evolutions = out.estimate.evolutions;
    if out.stopped {
        return Ok((state, rejected(stop.unwrap_or(0), evolutions)));
    }
    let info = StepInfo {
        accepted: accepts(log_u, out.estimate.value, lp, &state),
        early_stop: total + 1,
        evolutions,
    };
    if info.accepted {
        Ok((
            ChainState {
                theta,
                log_like: out.estimate,
                log_prior: lp,
                u: None,
            },
            info,
        ))
    } else {
        Ok((state, info))
    }
}

/// One correlated iteration: `theta` and the auxiliary normals move jointly
/// and are accepted or rejected together.
#[allow(clippy::too_many_arguments)]
pub fn correlated_emcmc_step(
    state: ChainState,
    model: &dyn SsmModel,
    data: &Dataset,
    n: usize,
    density: DensityKind,
    sigma_u: f64,
    proposal: &ProposalSpec,
    iter: &RngStream,
) -> Result<(ChainState, StepInfo)> {
    let u = state
        .u
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("correlated step needs auxiliary normals in the state".into()))?;
    let (theta, log_u) = propose(&state, proposal, iter)?;
    let u_star = crank_nicolson(u, sigma_u, &mut iter.derive(2))?;
    let lp = log_prior_at(model, &theta);
    if lp == f64::NEG_INFINITY {
        return Ok((state, rejected(0, 0)));
    }
    let est = enkf_loglik(model, &theta, data, n, EnkfNoise::Block(&u_star), density)?;
    let info = StepInfo {
        accepted: accepts(log_u, est.value, lp, &state),
        early_stop: data.len() + 1,
        evolutions: est.evolutions,
    };
    if info.accepted {
        Ok((
            ChainState {
                theta,
                log_like: est,
                log_prior: lp,
                u: Some(u_star),
            },
            info,
        ))
    } else {
        Ok((state, info))
    }
}

/// Evaluates the likelihood at `init`, redrawing the filter noise until the
/// estimate is finite.
pub fn initialize(
    model: &dyn SsmModel,
    data: &Dataset,
    sampler: &Sampler,
    init: &ParamVector,
    stream: &RngStream,
) -> Result<(ChainState, usize, u64)> {
    sampler.validate(model)?;
    let log_prior = model.prior_logpdf(init)?;
    if !log_prior.is_finite() {
        return Err(Error::InvalidArgument("initial parameters lie outside the prior support".into()));
    }
    let init_stream = stream.derive(INIT_LABEL);
    let mut evolutions = 0;
    for k in 0..MAX_INIT_ATTEMPTS {
        let mut s = init_stream.derive(k as u64);
        let (log_like, u) = match *sampler {
            Sampler::Pmmh { estimator } => (estimator.estimate(model, init, data, &mut s)?, None),
            Sampler::EarlyRejection { n } => (
                Estimator::Enkf {
                    n,
                    density: DensityKind::Plugin,
                }
                .estimate(model, init, data, &mut s)?,
                None,
            ),
            Sampler::Correlated { n, density, .. } => {
                let layout = enkf_block_layout(model, init, data, n)?;
                let u = NormalBlock::sample(layout, &mut s);
                (enkf_loglik(model, init, data, n, EnkfNoise::Block(&u), density)?, Some(u))
            }
        };
        evolutions += log_like.evolutions;
        if log_like.value.is_finite() {
            let state = ChainState {
                theta: init.clone(),
                log_like,
                log_prior,
                u,
            };
            return Ok((state, k + 1, evolutions));
        }
    }
    Err(Error::Initialization {
        attempts: MAX_INIT_ATTEMPTS,
    })
}

/// Runs `iterations` steps of `sampler` from `init`.
///
/// Initialization failures are errors. An error during the run ends it early
/// and is recorded in [`ChainTrace::failure`].
#[allow(clippy::too_many_arguments)]
pub fn run_chain(
    model: &dyn SsmModel,
    data: &Dataset,
    sampler: &Sampler,
    proposal: &ProposalSpec,
    iterations: usize,
    init: &ParamVector,
    stream: &RngStream,
    mut progress: Option<&mut dyn FnMut(&Progress)>,
) -> Result<ChainTrace> {
    model.check_dim(init)?;
    if proposal.dim() != init.len() {
        return Err(Error::DimensionMismatch {
            what: "proposal covariance",
            expected: init.len(),
            got: proposal.dim(),
        });
    }
    let (mut state, attempts, init_evolutions) = initialize(model, data, sampler, init, stream)?;
    let mut trace = ChainTrace::new(model.param_names(), iterations);
    trace.init_attempts = attempts;
    trace.evolutions = init_evolutions;
    let mut accepted = 0;
    for i in 0..iterations {
        let iter = stream.derive(i as u64);
        let step = match *sampler {
            Sampler::Pmmh { estimator } => pmmh_step(state.clone(), model, data, &estimator, proposal, &iter),
            Sampler::EarlyRejection { n } => early_rejection_emcmc_step(state.clone(), model, data, n, proposal, &iter),
            Sampler::Correlated { n, density, sigma_u } => {
                correlated_emcmc_step(state.clone(), model, data, n, density, sigma_u, proposal, &iter)
            }
        };
        let (next, info) = match step {
            Ok(r) => r,
            Err(e) => {
                trace.failure = Some(e);
                break;
            }
        };
        state = next;
        accepted += usize::from(info.accepted);
        trace.push(&state, &info);
        if let Some(cb) = progress.as_mut() {
            cb(&Progress {
                iteration: i + 1,
                iterations,
                accepted,
                log_like: state.log_like.value,
            });
        }
    }
    Ok(trace)
}

/// Plain pseudo-marginal chain with the given likelihood estimator.
pub fn pmmh_run(
    model: &dyn SsmModel,
    data: &Dataset,
    estimator: &Estimator,
    proposal: &ProposalSpec,
    iterations: usize,
    init: &ParamVector,
    stream: &RngStream,
) -> Result<ChainTrace> {
    let sampler = Sampler::Pmmh { estimator: *estimator };
    run_chain(model, data, &sampler, proposal, iterations, init, stream, None)
}

/// Correlated ensemble chain with the plug-in density.
#[allow(clippy::too_many_arguments)]
pub fn correlated_emcmc_run(
    model: &dyn SsmModel,
    data: &Dataset,
    n: usize,
    sigma_u: f64,
    proposal: &ProposalSpec,
    iterations: usize,
    init: &ParamVector,
    stream: &RngStream,
) -> Result<ChainTrace> {
    let sampler = Sampler::Correlated {
        n,
        density: DensityKind::Plugin,
        sigma_u,
    };
    run_chain(model, data, &sampler, proposal, iterations, init, stream, None)
}
