//! Benchmark model zoo and data simulation.

mod ecology;
mod linear;
mod lorenz;
mod reaction;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, ParamVector, SsmModel};
use crate::rng::RngStream;

pub use ecology::{ecology_evolve, EcologyModel, EcologyVariant, Growth};
pub use linear::LinearGaussianModel;
pub use lorenz::{lorenz_drift, lorenz_evolve, Lorenz63Model};
pub use reaction::{
    autoreg_network, gillespie_evolve, gillespie_next, lotka_volterra_network, pure_death_network,
    AutoregModel, LotkaVolterraModel, ReactionNetwork, DEFAULT_EVENT_LIMIT,
};

/// A model override: a scalar or a vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OverrideValue {
    Number(f64),
    List(Vec<f64>),
}

pub type Overrides = BTreeMap<String, OverrideValue>;

/// Names accepted by [`build_model`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Ricker,
    ThetaLogistic,
    MateLimited,
    FlexibleAllee,
    Lorenz63,
    LotkaVolterra,
    Autoreg,
    LinearGaussian,
}

impl ModelName {
    pub const ALL: [ModelName; 8] = [
        ModelName::Ricker,
        ModelName::ThetaLogistic,
        ModelName::MateLimited,
        ModelName::FlexibleAllee,
        ModelName::Lorenz63,
        ModelName::LotkaVolterra,
        ModelName::Autoreg,
        ModelName::LinearGaussian,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelName::Ricker => "ricker",
            ModelName::ThetaLogistic => "theta-logistic",
            ModelName::MateLimited => "mate-limited",
            ModelName::FlexibleAllee => "flexible-allee",
            ModelName::Lorenz63 => "lorenz63",
            ModelName::LotkaVolterra => "lotka-volterra",
            ModelName::Autoreg => "autoreg",
            ModelName::LinearGaussian => "linear-gaussian",
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// Builds a model with its default settings, adjusted by `overrides`.
///
/// Keys equal to a parameter name replace that parameter's default value
/// used for simulation; the remaining keys are model specific.
pub fn build_model(name: &str, overrides: &Overrides) -> Result<Box<dyn SsmModel>> {
    let name: ModelName = name.parse()?;
    let mut reader = OverrideReader::new(name.as_str(), overrides);
    let model: Box<dyn SsmModel> = match name {
        ModelName::Ricker => Box::new(EcologyModel::configure(EcologyVariant::Ricker, &mut reader)?),
        ModelName::ThetaLogistic => {
            Box::new(EcologyModel::configure(EcologyVariant::ThetaLogistic, &mut reader)?)
        }
        ModelName::MateLimited => {
            Box::new(EcologyModel::configure(EcologyVariant::MateLimited, &mut reader)?)
        }
        ModelName::FlexibleAllee => {
            Box::new(EcologyModel::configure(EcologyVariant::FlexibleAllee, &mut reader)?)
        }
        ModelName::Lorenz63 => Box::new(Lorenz63Model::configure(&mut reader)?),
        ModelName::LotkaVolterra => Box::new(LotkaVolterraModel::configure(&mut reader)?),
        ModelName::Autoreg => Box::new(AutoregModel::configure(&mut reader)?),
        ModelName::LinearGaussian => Box::new(LinearGaussianModel::configure(&mut reader)?),
    };
    reader.finish()?;
    Ok(model)
}

/// Tracks which override keys a model consumed.
pub(crate) struct OverrideReader<'a> {
    model: &'a str,
    overrides: &'a Overrides,
    used: Vec<&'a str>,
}

impl<'a> OverrideReader<'a> {
    pub(crate) fn new(model: &'a str, overrides: &'a Overrides) -> Self {
        Self {
            model,
            overrides,
            used: Vec::new(),
        }
    }

    fn invalid(&self, key: &str, reason: impl Into<String>) -> Error {
        Error::InvalidOverride {
            model: self.model.to_string(),
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    fn lookup(&mut self, key: &str) -> Option<&'a OverrideValue> {
        let (k, v) = self.overrides.get_key_value(key)?;
        self.used.push(k.as_str());
        Some(v)
    }

    pub(crate) fn number(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.lookup(key) {
            None => Ok(default),
            Some(OverrideValue::Number(v)) if v.is_finite() => Ok(*v),
            Some(_) => Err(self.invalid(key, "expected a finite number")),
        }
    }

    pub(crate) fn positive(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = self.number(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.invalid(key, "must be positive"))
        }
    }

    pub(crate) fn nonnegative(&mut self, key: &str, default: f64) -> Result<f64> {
        let v = self.number(key, default)?;
        if v >= 0.0 {
            Ok(v)
        } else {
            Err(self.invalid(key, "must be nonnegative"))
        }
    }

    pub(crate) fn count(&mut self, key: &str, default: usize) -> Result<usize> {
        let v = self.number(key, default as f64)?;
        if v >= 1.0 && v.fract() == 0.0 && v <= 1e6 {
            Ok(v as usize)
        } else {
            Err(self.invalid(key, "must be a positive integer"))
        }
    }

    pub(crate) fn list(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.lookup(key) {
            None => Ok(default.to_vec()),
            Some(OverrideValue::List(v)) if v.len() == default.len() && v.iter().all(|x| x.is_finite()) => {
                Ok(v.clone())
            }
            Some(_) => Err(self.invalid(key, format!("expected a list of {} finite numbers", default.len()))),
        }
    }

    /// Reads parameter-name overrides into `truth`.
    pub(crate) fn params(&mut self, names: &[String], truth: &mut [f64]) -> Result<()> {
        for (name, v) in names.iter().zip(truth.iter_mut()) {
            *v = self.number(name, *v)?;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.overrides.keys().find(|k| !self.used.contains(&k.as_str())) {
            Some(k) => Err(self.invalid(k, "unknown key")),
            None => Ok(()),
        }
    }
}

/// A simulated dataset with its latent states at the observation times.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub states: Vec<DVector<f64>>,
}

/// Forward-simulates `rows` observations.
///
/// Models that observe their initial state record `y_0` at time 0 followed by
/// `rows - 1` later observations; the others observe at `interval, 2 interval, ...`.
pub fn simulate_dataset(
    model: &dyn SsmModel,
    theta: &ParamVector,
    rows: usize,
    stream: &mut RngStream,
) -> Result<SimulatedData> {
    if rows == 0 {
        return Err(Error::InvalidArgument("cannot simulate an empty dataset".into()));
    }
    model.check_dim(theta)?;
    if !model.prior_logpdf(theta)?.is_finite() {
        return Err(Error::InvalidArgument("simulation parameters lie outside the prior support".into()));
    }
    let bound = model.bind(theta)?;
    let obs = bound.obs();
    let noise = linalg::psd_sqrt(bound.simulation_obs_cov())?;
    let interval = model.observation_interval();
    let offset = usize::from(!model.observes_initial_state());
    let mut x = vec![0.0; bound.state_dim()];
    bound.init(&mut x, stream);
    let mut times = Vec::with_capacity(rows);
    let mut ys = Vec::with_capacity(rows);
    let mut states = Vec::with_capacity(rows);
    for k in 0..rows {
        if k > 0 || offset == 1 {
            bound.advance(&mut x, stream)?;
        }
        let xs = DVector::from_column_slice(&x);
        let z = DVector::from_vec(stream.standard_normals(obs.obs_dim()));
        ys.push(&obs.p * &xs + &noise * z);
        times.push((k + offset) as f64 * interval);
        states.push(xs);
    }
    Ok(SimulatedData {
        dataset: Dataset::new(times, ys)?,
        states,
    })
}
