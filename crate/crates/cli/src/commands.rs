use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use emcmc::diagnostics::{acceptance_rate, format_efficiency_table, loglik_noise_probe, multivariate_ess, EfficiencySummary};
use emcmc::mcmc::{pilot_covariance, run_chain, tune_particles, ChainTrace, Progress, ProposalSpec, Sampler, TuningReport};
use emcmc::models::{build_model, simulate_dataset};
use emcmc::{Dataset, ParamVector, RngStream, SsmModel};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::compare;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::io;

// Stream ids under the data and chain seeds.
const DATA_STREAM: u64 = 1;
const PILOT_STREAM: u64 = 2;
const CHAIN_STREAM: u64 = 3;
const PROBE_STREAM: u64 = 4;
const TUNE_STREAM: u64 = 5;

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Metadata written next to every command's outputs. The `config` entry can
/// be fed back through `--config` to repeat the command.
struct Metadata {
    command: &'static str,
    config: RunConfig,
    started: f64,
    extra: serde_json::Map<String, Value>,
}

impl Metadata {
    fn new(command: &'static str, config: &RunConfig) -> Self {
        let mut config = config.clone();
        config.output = None;
        Self {
            command,
            config,
            started: unix_now(),
            extra: serde_json::Map::new(),
        }
    }

    fn set(&mut self, key: &str, value: impl Serialize) {
        self.extra.insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    fn write(self, dir: &Path, status: &str) -> Result<(), CliError> {
        let mut v = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "status": status,
            "started_unix": self.started,
            "finished_unix": unix_now(),
            "seeds": {
                "master": self.config.seeds.master,
                "data": self.config.seeds.data_seed(),
                "chain": self.config.seeds.chain_seed(),
            },
            "config": self.config,
        });
        if let Value::Object(map) = &mut v {
            map.extend(self.extra);
        }
        let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Io(e.to_string()))?;
        write_text(&dir.join("metadata.json"), &(text + "\n"))
    }
}

struct Setup {
    model: Box<dyn SsmModel>,
    data: Dataset,
}

fn model_of(cfg: &RunConfig) -> Result<Box<dyn SsmModel>, CliError> {
    build_model(&cfg.model.name, &cfg.model.overrides).map_err(CliError::config)
}

fn params(model: &dyn SsmModel, values: Option<&Vec<f64>>, what: &str) -> Result<ParamVector, CliError> {
    match values {
        None => Ok(model.true_params()),
        Some(v) => model
            .params(v.clone())
            .map_err(|e| CliError::Config(format!("{what}: {e} (parameters are {:?})", model.param_names()))),
    }
}

/// Simulates the configured dataset and writes it, with its latent states,
/// into `dir`.
fn simulate_into(cfg: &RunConfig, model: &dyn SsmModel, dir: &Path) -> Result<Dataset, CliError> {
    let theta = params(model, cfg.data.theta.as_ref(), "data.theta")?;
    let mut stream = RngStream::new(cfg.seeds.data_seed(), DATA_STREAM);
    let sim = simulate_dataset(model, &theta, cfg.data.rows, &mut stream).map_err(CliError::numerical)?;
    io::write_dataset(&dir.join("dataset.csv"), &sim.dataset)?;
    io::write_states(&dir.join("dataset_states.csv"), sim.dataset.times(), &sim.states)?;
    Ok(sim.dataset)
}

fn setup(cfg: &RunConfig, dir: &Path) -> Result<Setup, CliError> {
    cfg.check()?;
    let model = model_of(cfg)?;
    let data = match &cfg.data.path {
        Some(p) => {
            let d = io::read_dataset(p)?;
            if d.obs_dim() != model.obs_dim() {
                return Err(CliError::Config(format!(
                    "{} has {} observation columns but model {} observes {}",
                    p.display(),
                    d.obs_dim(),
                    model.name(),
                    model.obs_dim()
                )));
            }
            d
        }
        None => {
            prepare_dir(dir)?;
            simulate_into(cfg, model.as_ref(), dir)?
        }
    };
    Ok(Setup { model, data })
}

pub fn simulate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.check()?;
    let dir = cfg.output_dir("simulate");
    let model = model_of(cfg)?;
    prepare_dir(&dir)?;
    let meta = Metadata::new("simulate", cfg);
    let data = simulate_into(cfg, model.as_ref(), &dir)?;
    eprintln!("simulated {} observations from {} into {}", data.len(), model.name(), dir.display());
    meta.write(&dir, "ok")?;
    Ok(dir)
}

fn medians(cols: &[Vec<f64>]) -> Vec<f64> {
    cols.iter()
        .map(|c| {
            let mut s = c.clone();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            if n % 2 == 1 {
                s[n / 2]
            } else {
                0.5 * (s[n / 2 - 1] + s[n / 2])
            }
        })
        .collect()
}

fn tuning_csv(report: &TuningReport) -> String {
    let mut out = String::from("n,tau,zero_fraction\n");
    for r in &report.rows {
        let tau = if r.sd().is_finite() { io::num(r.sd()) } else { "inf".into() };
        out.push_str(&format!("{},{tau},{}\n", r.n, io::num(r.zero_fraction())));
    }
    out
}

pub fn tune(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    if cfg.tune.candidates.is_empty() {
        return Err(CliError::Config("the candidate particle list is empty".into()));
    }
    if cfg.tune.candidates.contains(&0) {
        return Err(CliError::Config("candidate particle counts must be positive".into()));
    }
    let dir = cfg.output_dir("tune");
    let Setup { model, data } = setup(cfg, &dir)?;
    let estimator = cfg.estimator.estimator();
    estimator.validate(model.as_ref()).map_err(CliError::config)?;
    let theta = match (&cfg.tune.theta, &cfg.tune.from_trace) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config("give at most one of tune.theta and tune.from_trace".into()));
        }
        (_, Some(path)) => {
            let trace = io::read_trace(path)?.after_burn_in(cfg.run.burn_in);
            if *trace.names != *model.param_names() {
                return Err(CliError::Config(format!(
                    "{} has parameters {:?}, model {} expects {:?}",
                    path.display(),
                    trace.names,
                    model.name(),
                    model.param_names()
                )));
            }
            if trace.len() == 0 {
                return Err(CliError::Config(format!("{} has no draws after burn-in", path.display())));
            }
            params(model.as_ref(), Some(&medians(&trace.columns)), "trace medians")?
        }
        (theta, None) => params(model.as_ref(), theta.as_ref(), "tune.theta")?,
    };
    prepare_dir(&dir)?;
    let mut meta = Metadata::new("tune", cfg);
    let stream = RngStream::new(cfg.seeds.chain_seed(), TUNE_STREAM);
    let report = tune_particles(
        model.as_ref(),
        &data,
        &theta,
        &estimator,
        &cfg.tune.candidates,
        cfg.tune.replicates,
        &stream,
    )
    .map_err(|e| match e {
        emcmc::Error::InvalidArgument(_) => CliError::config(e),
        e => CliError::numerical(e),
    })?;
    write_text(&dir.join("tuning.csv"), &tuning_csv(&report))?;
    print!("{}", tuning_csv(&report));
    if report.target_met {
        println!("recommended N = {}", report.chosen);
    } else {
        println!("recommended N = {} (no candidate reached the target spread)", report.chosen);
    }
    meta.set("theta", theta.values());
    meta.set("tuning", &report);
    meta.write(&dir, "ok")?;
    Ok(dir)
}

/// The proposal to run with, and the state the pilot runs ended in.
fn resolve_proposal(
    cfg: &RunConfig,
    model: &dyn SsmModel,
    data: &Dataset,
    sampler: &Sampler,
    init: ParamVector,
    meta: &mut Metadata,
) -> Result<(ProposalSpec, ParamVector), CliError> {
    let p = &cfg.proposal;
    let d = init.len();
    let given = if let Some(rows) = &p.covariance {
        Some(io::matrix_from_rows(rows).map_err(CliError::Config)?)
    } else if let Some(path) = &p.covariance_file {
        Some(io::read_matrix(path)?)
    } else {
        p.sd.as_ref().map(|sd| DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(sd.len(), sd.iter().map(|s| s * s))))
    };
    if let Some(cov) = given {
        if cov.nrows() != d {
            return Err(CliError::Config(format!("proposal has dimension {}, model has {d} parameters", cov.nrows())));
        }
        let spec = ProposalSpec::new(cov, p.scale.unwrap_or(1.0)).map_err(CliError::config)?;
        return Ok((spec, init));
    }

    let sd: Vec<f64> = match &p.pilot.sd {
        Some(sd) if sd.len() != d => {
            return Err(CliError::Config(format!("proposal.pilot.sd has {} entries, model has {d} parameters", sd.len())));
        }
        Some(sd) => sd.clone(),
        None => init.values().iter().map(|v| 0.05 * v.abs().max(0.01)).collect(),
    };
    let mut spec = ProposalSpec::diagonal(&sd, 1.0).map_err(CliError::config)?;
    let mut start = init;
    let base = RngStream::new(cfg.seeds.chain_seed(), PILOT_STREAM);
    let mut rates = Vec::new();
    for round in 0..p.pilot.rounds {
        let trace = run_chain(model, data, sampler, &spec, p.pilot.iterations, &start, &base.derive(round as u64), None)
            .map_err(CliError::numerical)?;
        if let Some(e) = &trace.failure {
            return Err(CliError::Numerical(format!("pilot round {}: {e}", round + 1)));
        }
        rates.push(acceptance_rate(&trace));
        let burn = (trace.len() as f64 * p.pilot.burn_in).floor() as usize;
        let cov = pilot_covariance(&trace, burn).map_err(|e| {
            CliError::Numerical(format!(
                "pilot round {} gave no usable covariance ({e}); set proposal.sd or proposal.pilot.sd",
                round + 1
            ))
        })?;
        spec = ProposalSpec::new(cov, ProposalSpec::optimal_scale(d)).map_err(CliError::numerical)?;
        if let Some(last) = trace.samples.last() {
            start = model.params(last.clone()).map_err(CliError::numerical)?;
        }
        eprintln!("pilot round {}: acceptance {:.3}", round + 1, rates[round]);
    }
    if let Some(scale) = p.scale {
        spec = ProposalSpec::new(spec.covariance().clone(), scale).map_err(CliError::config)?;
    }
    meta.set("pilot_acceptance", &rates);
    Ok((spec, start))
}

struct ChainResult {
    trace: ChainTrace,
    seconds: f64,
}

fn progress_printer(label: String, every: usize) -> impl FnMut(&Progress) {
    move |p: &Progress| {
        if p.iteration.is_multiple_of(every) || p.iteration == p.iterations {
            eprintln!(
                "{label}iteration {}/{} acceptance {:.3} log-likelihood {:.3}",
                p.iteration,
                p.iterations,
                p.accepted as f64 / p.iteration as f64,
                p.log_like
            );
        }
    }
}

fn efficiency(
    cfg: &RunConfig,
    model: &dyn SsmModel,
    data: &Dataset,
    sampler: &Sampler,
    chain: usize,
    r: &ChainResult,
) -> (EfficiencySummary, Option<String>) {
    let burn = (r.trace.len() as f64 * cfg.run.burn_in).floor() as usize;
    let mut note = None;
    let mess = match multivariate_ess(&r.trace.matrix_from(burn)) {
        Ok(e) => e.mess,
        Err(e) => {
            note = Some(format!("effective sample size unavailable: {e}"));
            f64::NAN
        }
    };
    // Likelihood noise at the posterior median, with the chain's estimator.
    let tau = if r.trace.len() > burn {
        let cols: Vec<Vec<f64>> = (0..r.trace.dim()).map(|j| r.trace.column(j)[burn..].to_vec()).collect();
        let estimator = match *sampler {
            Sampler::Pmmh { estimator } => estimator,
            _ => cfg.estimator.estimator(),
        };
        let stream = RngStream::new(cfg.seeds.chain_seed(), PROBE_STREAM).derive(chain as u64);
        model
            .params(medians(&cols))
            .ok()
            .and_then(|theta| loglik_noise_probe(model, data, &theta, &estimator, cfg.tune.replicates.max(10), &stream).ok())
            .map(|p| p.sd)
            .filter(|s| s.is_finite())
    } else {
        None
    };
    let summary = EfficiencySummary::new(
        sampler.estimator_kind(),
        sampler.particles(),
        tau,
        acceptance_rate(&r.trace),
        mess,
        r.seconds,
    );
    (summary, note)
}

pub fn run(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.output_dir("run");
    let Setup { model, data } = setup(cfg, &dir)?;
    let model = model.as_ref();
    let sampler = cfg.estimator.sampler()?;
    sampler.validate(model).map_err(CliError::config)?;
    let init = params(model, cfg.run.init.as_ref(), "run.init")?;
    prepare_dir(&dir)?;
    let mut meta = Metadata::new("run", cfg);

    let (proposal, start) = resolve_proposal(cfg, model, &data, &sampler, init, &mut meta)?;
    let k = cfg.run.chains;
    let base = RngStream::new(cfg.seeds.chain_seed(), CHAIN_STREAM);
    let every = (cfg.run.iterations / 10).max(1);
    let results = (0..k)
        .into_par_iter()
        .map(|c| {
            let stream = if k == 1 { base.clone() } else { base.derive(c as u64) };
            let label = if k == 1 { String::new() } else { format!("chain {c}: ") };
            let mut cb = progress_printer(label, every);
            let clock = Instant::now();
            let trace = run_chain(model, &data, &sampler, &proposal, cfg.run.iterations, &start, &stream, Some(&mut cb))
                .map_err(CliError::numerical)?;
            Ok(ChainResult {
                trace,
                seconds: clock.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<ChainResult>, CliError>>()?;

    let mut summaries = Vec::new();
    let mut chains = Vec::new();
    let mut failure = None;
    for (c, r) in results.iter().enumerate() {
        let file = if k == 1 { "trace.csv".to_string() } else { format!("trace_{c}.csv") };
        io::write_trace(&dir.join(&file), &r.trace)?;
        let (summary, note) = efficiency(cfg, model, &data, &sampler, c, r);
        if let Some(e) = &r.trace.failure {
            failure.get_or_insert_with(|| format!("chain {c} stopped after {} iterations: {e}", r.trace.len()));
        }
        chains.push(json!({
            "trace": file,
            "iterations": r.trace.len(),
            "init_attempts": r.trace.init_attempts,
            "evolutions": r.trace.evolutions,
            "failure": r.trace.failure.as_ref().map(|e| e.to_string()),
            "note": note,
            "efficiency": &summary,
        }));
        summaries.push(summary);
    }
    let table = format_efficiency_table(&summaries);
    write_text(&dir.join("summary.txt"), &table)?;
    print!("{table}");
    meta.set(
        "proposal",
        json!({
            "covariance": proposal.covariance().row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
            "scale": proposal.scale(),
        }),
    );
    meta.set("start", start.values());
    meta.set("chains", chains);
    match failure {
        Some(msg) => {
            meta.set("failure", &msg);
            meta.write(&dir, "failed")?;
            Err(CliError::Numerical(msg))
        }
        None => {
            meta.write(&dir, "ok")?;
            Ok(dir)
        }
    }
}

pub fn compare(paths: &[PathBuf], burn_in: f64, points: usize, output: &Path) -> Result<PathBuf, CliError> {
    if paths.is_empty() {
        return Err(CliError::Config("no traces given".into()));
    }
    if !(0.0..1.0).contains(&burn_in) {
        return Err(CliError::Config(format!("burn-in must lie in [0, 1), got {burn_in}")));
    }
    if points < 2 {
        return Err(CliError::Config("the density grid needs at least two points".into()));
    }
    let labels: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    let traces = paths
        .iter()
        .map(|p| io::read_trace(p).map(|t| t.after_burn_in(burn_in)))
        .collect::<Result<Vec<_>, _>>()?;
    compare::check_names(&traces, &labels)?;
    let density = compare::density_csv(&traces, points)?;
    prepare_dir(output)?;
    write_text(&output.join("density.csv"), &density)?;
    let table = compare::summary_table(&labels, &traces);
    write_text(&output.join("comparison.txt"), &table)?;
    print!("{table}");
    Ok(output.to_path_buf())
}
