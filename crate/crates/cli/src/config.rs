use std::path::{Path, PathBuf};

use emcmc::filters::{DensityKind, Estimator};
use emcmc::mcmc::Sampler;
use emcmc::models::Overrides;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable holding the default output root.
pub const OUTPUT_ROOT_VAR: &str = "EMCMC_OUTPUT_ROOT";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub proposal: ProposalConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Overrides::is_empty")]
    pub overrides: Overrides,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            name: "ricker".into(),
            overrides: Overrides::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV file to read; the data are simulated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "default_rows")]
    pub rows: usize,
    /// Parameter values to simulate from, in model order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
}

fn default_rows() -> usize {
    100
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            rows: default_rows(),
            theta: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorName {
    Bpf,
    Enkf,
    EnkfUnbiased,
    EnkfCorrelated,
    EnkfRqmc,
    Kalman,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorName,
    #[serde(default = "default_particles")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_u: Option<f64>,
    /// Density used by the correlated ensemble sampler.
    #[serde(default = "default_density")]
    pub density: DensityKind,
    #[serde(default)]
    pub early_rejection: bool,
}

fn default_particles() -> usize {
    250
}

fn default_density() -> DensityKind {
    DensityKind::Plugin
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorName::Enkf,
            n: default_particles(),
            sigma_u: None,
            density: default_density(),
            early_rejection: false,
        }
    }
}

impl EstimatorConfig {
    /// The estimator used for one-off likelihood evaluations.
    pub fn estimator(&self) -> Estimator {
        let n = self.n;
        match self.kind {
            EstimatorName::Bpf => Estimator::Bpf { n },
            EstimatorName::Enkf => Estimator::Enkf {
                n,
                density: DensityKind::Plugin,
            },
            EstimatorName::EnkfUnbiased => Estimator::Enkf {
                n,
                density: DensityKind::Unbiased,
            },
            EstimatorName::EnkfCorrelated => Estimator::Enkf {
                n,
                density: self.density,
            },
            EstimatorName::EnkfRqmc => Estimator::EnkfRqmc { n },
            EstimatorName::Kalman => Estimator::Kalman,
        }
    }

    pub fn sampler(&self) -> Result<Sampler, CliError> {
        if self.sigma_u.is_some() && self.kind != EstimatorName::EnkfCorrelated {
            return Err(CliError::Config("sigma_u applies only to the enkf-correlated estimator".into()));
        }
        if self.early_rejection {
            return match self.kind {
                EstimatorName::Enkf => Ok(Sampler::EarlyRejection { n: self.n }),
                _ => Err(CliError::Config(
                    "early rejection is available for the plug-in enkf estimator only".into(),
                )),
            };
        }
        Ok(match self.kind {
            EstimatorName::EnkfCorrelated => Sampler::Correlated {
                n: self.n,
                density: self.density,
                sigma_u: self
                    .sigma_u
                    .ok_or_else(|| CliError::Config("enkf-correlated needs sigma_u".into()))?,
            },
            _ => Sampler::Pmmh {
                estimator: self.estimator(),
            },
        })
    }
}

/// Where the random-walk covariance comes from. With no matrix given, it is
/// estimated from pilot runs and frozen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct ProposalConfig {
    /// Full covariance, one row per entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Headerless CSV holding the covariance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance_file: Option<PathBuf>,
    /// Diagonal standard deviations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<Vec<f64>>,
    /// Multiplier on the covariance; defaults to 1 for a given matrix and to
    /// `2.562^2 / d` for a pilot estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default)]
    pub pilot: PilotConfig,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotConfig {
    #[serde(default = "default_pilot_iterations")]
    pub iterations: usize,
    #[serde(default = "default_pilot_rounds")]
    pub rounds: usize,
    /// Fraction of each pilot run discarded before estimating the covariance.
    #[serde(default = "default_pilot_burn_in")]
    pub burn_in: f64,
    /// Starting standard deviations; `0.01 max(|theta|, 0.01)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<Vec<f64>>,
}

fn default_pilot_iterations() -> usize {
    1000
}

fn default_pilot_rounds() -> usize {
    2
}

fn default_pilot_burn_in() -> f64 {
    0.2
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            iterations: default_pilot_iterations(),
            rounds: default_pilot_rounds(),
            burn_in: default_pilot_burn_in(),
            sd: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Fraction of the chain discarded before diagnostics.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// Starting parameters; the simulation truth when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
    #[serde(default = "default_chains")]
    pub chains: usize,
}

fn default_iterations() -> usize {
    10_000
}

fn default_burn_in() -> f64 {
    0.1
}

fn default_chains() -> usize {
    1
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            burn_in: default_burn_in(),
            init: None,
            chains: default_chains(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    #[serde(default = "default_candidates")]
    pub candidates: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Representative parameter value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    /// Trace whose marginal medians give the representative value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_trace: Option<PathBuf>,
}

fn default_candidates() -> Vec<usize> {
    vec![100, 250, 500, 1000, 2000, 5000]
}

fn default_replicates() -> usize {
    50
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            candidates: default_candidates(),
            replicates: default_replicates(),
            theta: None,
            from_trace: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct Seeds {
    #[serde(default)]
    pub master: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<u64>,
}


impl Seeds {
    pub fn data_seed(&self) -> u64 {
        self.data.unwrap_or(self.master)
    }

    pub fn chain_seed(&self) -> u64 {
        self.chain.unwrap_or(self.master)
    }
}

#[derive(Deserialize)]
struct MetadataConfig {
    config: RunConfig,
}

/// Reads a TOML config, or the `config` object of a `metadata.json` written
/// by an earlier run.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: MetadataConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid metadata {}: {e}", path.display())))?;
        Ok(m.config)
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }
}

impl RunConfig {
    pub fn check(&self) -> Result<(), CliError> {
        let frac = |v: f64, what: &str| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(CliError::Config(format!("{what} must lie in [0, 1), got {v}")))
            }
        };
        frac(self.run.burn_in, "run.burn_in")?;
        frac(self.proposal.pilot.burn_in, "proposal.pilot.burn_in")?;
        if self.run.chains == 0 {
            return Err(CliError::Config("run.chains must be at least 1".into()));
        }
        if self.data.path.is_none() && self.data.rows == 0 {
            return Err(CliError::Config("data.rows must be positive".into()));
        }
        let sources = [
            self.proposal.covariance.is_some(),
            self.proposal.covariance_file.is_some(),
            self.proposal.sd.is_some(),
        ];
        if sources.iter().filter(|s| **s).count() > 1 {
            return Err(CliError::Config(
                "give at most one of proposal.covariance, proposal.covariance_file and proposal.sd".into(),
            ));
        }
        Ok(())
    }

    /// Output directory: the explicit one, else a folder under the
    /// output root named after the command, model and estimator.
    pub fn output_dir(&self, command: &str) -> PathBuf {
        if let Some(p) = &self.output {
            return p.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("emcmc-output"), PathBuf::from);
        let est = serde_json::to_value(self.estimator.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        root.join(format!("{command}-{}-{est}-{}", self.model.name, self.seeds.master))
    }
}
