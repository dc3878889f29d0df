//! Markov jump process models simulated with Gillespie's direct method.
//!
//! Ensemble shifts move counts off the integer lattice, so hazards are
//! evaluated on real-valued states: a reaction whose firing would drive a
//! species below zero has hazard zero, and hazards are floored at zero.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::OverrideReader;
use crate::error::{Error, Result};
use crate::model::{log_exponential_logpdf, BoundModel, ObsModel, ParamVector, SsmModel};
use crate::rng::RngStream;

/// Events allowed per call to [`gillespie_evolve`] before giving up.
pub const DEFAULT_EVENT_LIMIT: usize = 1_000_000;

type HazardFn = fn(x: &[f64], c: &[f64], h: &mut [f64]);

/// A mass-action reaction network with fixed rate constants.
#[derive(Clone, Debug)]
pub struct ReactionNetwork {
    species: usize,
    /// reactions x species net change
    stoichiometry: Vec<Vec<f64>>,
    rates: Vec<f64>,
    hazard: HazardFn,
}

impl ReactionNetwork {
    pub fn species(&self) -> usize {
        self.species
    }

    pub fn reactions(&self) -> usize {
        self.stoichiometry.len()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn stoichiometry(&self, reaction: usize) -> &[f64] {
        &self.stoichiometry[reaction]
    }

    /// Fills `h` with the guarded hazards at `x` and returns their sum.
    pub fn hazards(&self, x: &[f64], h: &mut [f64]) -> f64 {
        (self.hazard)(x, &self.rates, h);
        let mut total = 0.0;
        for (hi, nu) in h.iter_mut().zip(&self.stoichiometry) {
            let feasible = x.iter().zip(nu).all(|(xj, dj)| xj + dj >= 0.0);
            *hi = if feasible && hi.is_finite() { hi.max(0.0) } else { 0.0 };
            total += *hi;
        }
        total
    }

    fn apply(&self, x: &mut [f64], reaction: usize) {
        for (xj, dj) in x.iter_mut().zip(&self.stoichiometry[reaction]) {
            *xj += dj;
        }
    }
}

fn lv_hazard(x: &[f64], c: &[f64], h: &mut [f64]) {
    h[0] = c[0] * x[0];
    h[1] = c[1] * x[0] * x[1];
    h[2] = c[2] * x[1];
}

/// Prey reproduction, predation, predator death.
pub fn lotka_volterra_network(c: [f64; 3]) -> ReactionNetwork {
    ReactionNetwork {
        species: 2,
        stoichiometry: vec![vec![1.0, 0.0], vec![-1.0, 1.0], vec![0.0, -1.0]],
        rates: c.to_vec(),
        hazard: lv_hazard,
    }
}

fn autoreg_hazard(x: &[f64], c: &[f64], h: &mut [f64]) {
    h[0] = c[0] * x[0] * x[4];
    h[1] = c[1] * x[1];
    h[2] = c[2] * x[0];
    h[3] = c[3] * x[2];
    h[4] = c[4] * x[3] * (x[3] - 1.0) / 2.0;
    h[5] = c[5] * x[4];
    h[6] = c[6] * x[2];
    h[7] = c[7] * x[3];
}

/// Gene, bound gene, RNA, protein, dimer.
pub fn autoreg_network(c: [f64; 8]) -> ReactionNetwork {
    ReactionNetwork {
        species: 5,
        stoichiometry: vec![
            vec![-1.0, 1.0, 0.0, 0.0, -1.0],
            vec![1.0, -1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, -2.0, 1.0],
            vec![0.0, 0.0, 0.0, 2.0, -1.0],
            vec![0.0, 0.0, -1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, -1.0, 0.0],
        ],
        rates: c.to_vec(),
        hazard: autoreg_hazard,
    }
}

fn death_hazard(x: &[f64], c: &[f64], h: &mut [f64]) {
    h[0] = c[0] * x[0];
}

/// Single species dying at rate `gamma` per individual.
pub fn pure_death_network(gamma: f64) -> ReactionNetwork {
    ReactionNetwork {
        species: 1,
        stoichiometry: vec![vec![-1.0]],
        rates: vec![gamma],
        hazard: death_hazard,
    }
}

/// Dwell time and reaction index of the next event, or `None` when the
/// state is absorbing.
pub fn gillespie_next(net: &ReactionNetwork, x: &[f64], rng: &mut RngStream) -> Option<(f64, usize)> {
    let mut h = vec![0.0; net.reactions()];
    next_event(net, x, &mut h, rng)
}

fn next_event(net: &ReactionNetwork, x: &[f64], h: &mut [f64], rng: &mut RngStream) -> Option<(f64, usize)> {
    let h0 = net.hazards(x, h);
    if h0 <= 0.0 {
        return None;
    }
    let dt = rng.exponential(h0);
    let target = rng.uniform() * h0;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, hi) in h.iter().enumerate() {
        if *hi > 0.0 {
            acc += hi;
            last = i;
            if target < acc {
                return Some((dt, i));
            }
        }
    }
    Some((dt, last))
}

/// Exact simulation of the jump process over `t_span` time units.
pub fn gillespie_evolve(net: &ReactionNetwork, x: &mut [f64], t_span: f64, rng: &mut RngStream) -> Result<()> {
    gillespie_evolve_limited(net, x, t_span, DEFAULT_EVENT_LIMIT, rng)
}

pub fn gillespie_evolve_limited(
    net: &ReactionNetwork,
    x: &mut [f64],
    t_span: f64,
    limit: usize,
    rng: &mut RngStream,
) -> Result<()> {
    let mut h = vec![0.0; net.reactions()];
    let mut t = 0.0;
    for _ in 0..limit {
        match next_event(net, x, &mut h, rng) {
            None => return Ok(()),
            Some((dt, i)) => {
                t += dt;
                if t > t_span {
                    return Ok(());
                }
                net.apply(x, i);
            }
        }
    }
    Err(Error::EventLimit { limit })
}

fn reflect(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.abs());
}

fn log_names(names: &[&str]) -> Arc<[String]> {
    names.iter().map(|s| s.to_string()).collect::<Vec<_>>().into()
}

/// Predator-prey jump process observed with independent Gaussian noise on
/// both species.
#[derive(Clone, Debug)]
pub struct LotkaVolterraModel {
    names: Arc<[String]>,
    truth: Vec<f64>,
    x0: Vec<f64>,
    interval: f64,
}

impl Default for LotkaVolterraModel {
    fn default() -> Self {
        Self {
            names: log_names(&["log_c1", "log_c2", "log_c3", "log_sigma1", "log_sigma2"]),
            truth: vec![0.5f64.ln(), 0.0025f64.ln(), 0.3f64.ln(), 0.0, 0.0],
            x0: vec![71.0, 79.0],
            interval: 1.0,
        }
    }
}

impl LotkaVolterraModel {
    pub(crate) fn configure(reader: &mut OverrideReader<'_>) -> Result<Self> {
        let mut m = Self::default();
        let names = m.names.clone();
        reader.params(&names, &mut m.truth)?;
        m.x0 = reader.list("x0", &m.x0)?;
        m.interval = reader.positive("interval", m.interval)?;
        if m.x0.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidOverride {
                model: "lotka-volterra".into(),
                key: "x0".into(),
                reason: "counts must be nonnegative".into(),
            });
        }
        Ok(m)
    }
}

impl SsmModel for LotkaVolterraModel {
    fn name(&self) -> &str {
        "lotka-volterra"
    }

    fn param_names(&self) -> Arc<[String]> {
        self.names.clone()
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn observation_interval(&self) -> f64 {
        self.interval
    }

    fn observes_initial_state(&self) -> bool {
        true
    }

    fn true_params(&self) -> ParamVector {
        ParamVector::new(self.names.clone(), self.truth.clone()).expect("defaults are finite")
    }

    fn log_prior(&self, v: &[f64]) -> f64 {
        if v.iter().all(|p| (-8.0..=8.0).contains(p)) {
            -(v.len() as f64) * 16f64.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn bind(&self, theta: &ParamVector) -> Result<Box<dyn BoundModel + '_>> {
        self.check_dim(theta)?;
        let e: Vec<f64> = theta.values().iter().map(|v| v.exp()).collect();
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![e[3] * e[3], e[4] * e[4]]));
        let obs = ObsModel::new(DMatrix::identity(2, 2), s)?;
        Ok(Box::new(BoundReaction {
            net: lotka_volterra_network([e[0], e[1], e[2]]),
            x0: &self.x0,
            interval: self.interval,
            sim_s: obs.s.clone(),
            obs,
        }))
    }
}

/// Prokaryotic auto-regulation by protein dimers, observed through RNA and
/// total protein.
#[derive(Clone, Debug)]
pub struct AutoregModel {
    names: Arc<[String]>,
    truth: Vec<f64>,
    x0: Vec<f64>,
    c5: f64,
    c6: f64,
    obs_sd: f64,
    variance_floor: f64,
    interval: f64,
}

impl Default for AutoregModel {
    fn default() -> Self {
        Self {
            names: log_names(&["log_c1", "log_c2", "log_c3", "log_c4", "log_c7", "log_c8"]),
            truth: [0.1f64, 0.7, 0.35, 0.2, 0.3, 0.1].iter().map(|c| c.ln()).collect(),
            x0: vec![5.0, 5.0, 8.0, 8.0, 8.0],
            c5: 0.1,
            c6: 0.9,
            obs_sd: 1.0,
            variance_floor: 0.01,
            interval: 1.0,
        }
    }
}

impl AutoregModel {
    pub(crate) fn configure(reader: &mut OverrideReader<'_>) -> Result<Self> {
        let mut m = Self::default();
        let names = m.names.clone();
        reader.params(&names, &mut m.truth)?;
        m.x0 = reader.list("x0", &m.x0)?;
        m.c5 = reader.positive("c5", m.c5)?;
        m.c6 = reader.positive("c6", m.c6)?;
        m.obs_sd = reader.nonnegative("obs_sd", m.obs_sd)?;
        m.variance_floor = reader.nonnegative("variance_floor", m.variance_floor)?;
        m.interval = reader.positive("interval", m.interval)?;
        if m.x0.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidOverride {
                model: "autoreg".into(),
                key: "x0".into(),
                reason: "counts must be nonnegative".into(),
            });
        }
        if m.obs_sd == 0.0 && m.variance_floor == 0.0 {
            return Err(Error::InvalidOverride {
                model: "autoreg".into(),
                key: "variance_floor".into(),
                reason: "must be positive when obs_sd is zero".into(),
            });
        }
        Ok(m)
    }

    fn projection() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 5, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0])
    }
}

impl SsmModel for AutoregModel {
    fn name(&self) -> &str {
        "autoreg"
    }

    fn param_names(&self) -> Arc<[String]> {
        self.names.clone()
    }

    fn state_dim(&self) -> usize {
        5
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn observation_interval(&self) -> f64 {
        self.interval
    }

    fn observes_initial_state(&self) -> bool {
        true
    }

    fn true_params(&self) -> ParamVector {
        ParamVector::new(self.names.clone(), self.truth.clone()).expect("defaults are finite")
    }

    fn log_prior(&self, v: &[f64]) -> f64 {
        v.iter().map(|&phi| log_exponential_logpdf(phi, 0.5)).sum()
    }

    fn bind(&self, theta: &ParamVector) -> Result<Box<dyn BoundModel + '_>> {
        self.check_dim(theta)?;
        let e: Vec<f64> = theta.values().iter().map(|v| v.exp()).collect();
        let c = [e[0], e[1], e[2], e[3], self.c5, self.c6, e[4], e[5]];
        let var = self.obs_sd * self.obs_sd;
        let obs = ObsModel::new(Self::projection(), DMatrix::identity(2, 2) * var.max(self.variance_floor))?;
        Ok(Box::new(BoundReaction {
            net: autoreg_network(c),
            x0: &self.x0,
            interval: self.interval,
            sim_s: DMatrix::identity(2, 2) * var,
            obs,
        }))
    }
}

struct BoundReaction<'a> {
    net: ReactionNetwork,
    x0: &'a [f64],
    interval: f64,
    sim_s: DMatrix<f64>,
    obs: ObsModel,
}

impl BoundModel for BoundReaction<'_> {
    fn state_dim(&self) -> usize {
        self.net.species()
    }

    fn obs(&self) -> &ObsModel {
        &self.obs
    }

    fn simulation_obs_cov(&self) -> &DMatrix<f64> {
        &self.sim_s
    }

    fn init_with_normals(&self, x: &mut [f64], _z: &[f64]) {
        x.copy_from_slice(self.x0);
    }

    fn advance(&self, x: &mut [f64], rng: &mut RngStream) -> Result<()> {
        gillespie_evolve(&self.net, x, self.interval, rng)
    }

    fn constrain(&self, x: &mut [f64]) {
        reflect(x);
    }
}
