//! `emcmc`: simulate data, tune particle counts, run pseudo-marginal chains
//! and compare posterior samples.

mod commands;
mod compare;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emcmc::models::OverrideValue;

use config::{EstimatorName, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "emcmc", version, about = "Ensemble and particle MCMC for state space models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a model.
    Simulate(Common),
    /// Measure log-likelihood noise for candidate particle counts.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Comma-separated particle counts.
        #[arg(long)]
        candidates: Option<String>,
        #[arg(long)]
        replicates: Option<usize>,
        /// Comma-separated parameter values to tune at.
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<String>,
        /// Tune at the marginal medians of this trace.
        #[arg(long)]
        from_trace: Option<PathBuf>,
    },
    /// Run pseudo-marginal MCMC.
    Run(Common),
    /// Compare posterior samples from several traces.
    Compare {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        burn_in: f64,
        /// Density grid points per parameter.
        #[arg(long, default_value_t = 512)]
        grid: usize,
        #[arg(long, default_value = "emcmc-compare")]
        output: PathBuf,
    },
}

/// Options shared by the commands that build a model. Flags override the
/// config file.
#[derive(Args)]
struct Common {
    /// TOML config, or a metadata.json from an earlier run.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Model override, `key=value` or `key=v1,v2,...`.
    #[arg(long = "set", value_name = "KEY=VALUE", allow_hyphen_values = true)]
    set: Vec<String>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorName>,
    #[arg(long)]
    n_particles: Option<usize>,
    #[arg(long)]
    sigma_u: Option<f64>,
    #[arg(long)]
    early_rejection: bool,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    chains: Option<usize>,
    /// Number of observations to simulate.
    #[arg(long)]
    rows: Option<usize>,
    /// Dataset CSV to use instead of simulating.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    chain_seed: Option<u64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| CliError::Config(format!("{what}: cannot parse `{s}`: {e}"))))
        .collect()
}

impl Common {
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => config::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = self.model {
            cfg.model.name = m;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            let vals = parse_list::<f64>(v, k)?;
            let value = match vals.as_slice() {
                [x] if !v.contains(',') => OverrideValue::Number(*x),
                _ => OverrideValue::List(vals),
            };
            cfg.model.overrides.insert(k.trim().to_string(), value);
        }
        if let Some(e) = self.estimator {
            cfg.estimator.kind = e;
        }
        if let Some(n) = self.n_particles {
            cfg.estimator.n = n;
        }
        if self.sigma_u.is_some() {
            cfg.estimator.sigma_u = self.sigma_u;
        }
        cfg.estimator.early_rejection |= self.early_rejection;
        if let Some(i) = self.iters {
            cfg.run.iterations = i;
        }
        if let Some(b) = self.burn_in {
            cfg.run.burn_in = b;
        }
        if let Some(c) = self.chains {
            cfg.run.chains = c;
        }
        if let Some(r) = self.rows {
            cfg.data.rows = r;
        }
        if self.data.is_some() {
            cfg.data.path = self.data;
        }
        if let Some(s) = self.seed {
            cfg.seeds.master = s;
        }
        if self.data_seed.is_some() {
            cfg.seeds.data = self.data_seed;
        }
        if self.chain_seed.is_some() {
            cfg.seeds.chain = self.chain_seed;
        }
        if self.output.is_some() {
            cfg.output = self.output;
        }
        Ok(cfg)
    }
}

fn dispatch(cli: Cli) -> Result<PathBuf, CliError> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&c.resolve()?),
        Command::Run(c) => commands::run(&c.resolve()?),
        Command::Tune {
            common,
            candidates,
            replicates,
            theta,
            from_trace,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(c) = candidates {
                cfg.tune.candidates = parse_list(&c, "--candidates")?;
            }
            if let Some(r) = replicates {
                cfg.tune.replicates = r;
            }
            if let Some(t) = theta {
                cfg.tune.theta = Some(parse_list(&t, "--theta")?);
            }
            if from_trace.is_some() {
                cfg.tune.from_trace = from_trace;
            }
            commands::tune(&cfg)
        }
        Command::Compare {
            traces,
            burn_in,
            grid,
            output,
        } => commands::compare(&traces, burn_in, grid, &output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(dir) => {
            eprintln!("outputs in {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
