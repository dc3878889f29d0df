//! Choosing the number of particles from the spread of the log-likelihood.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{noise_from_values, NoiseProbe};
use crate::error::{Error, Result};
use crate::filters::Estimator;
use crate::model::{Dataset, ParamVector, SsmModel};
use crate::rng::RngStream;

/// Log-likelihood standard deviation the tuner aims for.
pub const TARGET_LOGLIK_SD: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub n: usize,
    /// `None` when every replicate was `-inf`.
    pub probe: Option<NoiseProbe>,
}

impl TuningRow {
    pub fn sd(&self) -> f64 {
        self.probe.as_ref().map_or(f64::INFINITY, |p| p.sd)
    }

    pub fn zero_fraction(&self) -> f64 {
        self.probe.as_ref().map_or(1.0, |p| p.zeros as f64 / p.replicates as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub rows: Vec<TuningRow>,
    pub chosen: usize,
    /// False when no candidate reached [`TARGET_LOGLIK_SD`] and the largest
    /// was returned instead.
    pub target_met: bool,
}

/// Smallest candidate whose log-likelihood sd at `theta` is at most
/// [`TARGET_LOGLIK_SD`]. Candidate `j` (in ascending order) draws its
/// replicates from `stream.derive(j)`.
pub fn tune_particles(
    model: &dyn SsmModel,
    data: &Dataset,
    theta: &ParamVector,
    estimator: &Estimator,
    candidates: &[usize],
    replicates: usize,
    stream: &RngStream,
) -> Result<TuningReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate particle counts given".into()));
    }
    if replicates < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 replicates, got {replicates}")));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut rows = Vec::with_capacity(sorted.len());
    for (j, &n) in sorted.iter().enumerate() {
        let est = estimator.with_particles(n);
        est.validate(model)?;
        let base = stream.derive(j as u64);
        let values = (0..replicates)
            .map(|r| Ok(est.estimate(model, theta, data, &mut base.derive(r as u64))?.value))
            .collect::<Result<Vec<f64>>>()?;
        let probe = if values.iter().all(|v| *v == f64::NEG_INFINITY) {
            None
        } else {
            Some(noise_from_values(&values)?)
        };
        rows.push(TuningRow { n, probe });
    }
    let hit = rows.iter().find(|r| r.sd() <= TARGET_LOGLIK_SD).map(|r| r.n);
    Ok(TuningReport {
        chosen: hit.unwrap_or(*sorted.last().expect("nonempty")),
        target_met: hit.is_some(),
        rows,
    })
}
