//! Stochastic Lorenz 63 system under an Euler–Maruyama discretisation,
//! observed directly with isotropic Gaussian noise.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::OverrideReader;
use crate::error::{Error, Result};
use crate::model::{log_exponential_logpdf, BoundModel, ObsModel, ParamVector, SsmModel};
use crate::rng::RngStream;

const PARAMS: [&str; 6] = [
    "log_theta1",
    "log_theta2",
    "log_theta3",
    "log_sigma1",
    "log_sigma2",
    "log_sigma3",
];

const PRIOR_RATE: f64 = 0.1;

/// Drift `(t1 (x2 - x1), t2 x1 - x2 - x1 x3, x1 x2 - t3 x3)`.
pub fn lorenz_drift(x: &[f64], theta: &[f64; 3]) -> [f64; 3] {
    [
        theta[0] * (x[1] - x[0]),
        theta[1] * x[0] - x[1] - x[0] * x[2],
        x[0] * x[1] - theta[2] * x[2],
    ]
}

/// Euler–Maruyama steps driven by `z`, three normals per step.
///
/// `sigma` holds the diffusion standard deviations. Fails with the 1-based
/// step index when the state stops being finite.
pub fn lorenz_evolve(x: &mut [f64], theta: &[f64; 3], sigma: &[f64; 3], dt: f64, z: &[f64]) -> Result<()> {
    let sdt = dt.sqrt();
    for (step, zi) in z.chunks_exact(3).enumerate() {
        let a = lorenz_drift(x, theta);
        for i in 0..3 {
            x[i] += a[i] * dt + sigma[i] * sdt * zi[i];
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step: step + 1 });
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Lorenz63Model {
    names: Arc<[String]>,
    truth: Vec<f64>,
    dt: f64,
    inner_steps: usize,
    obs_var: f64,
    x0: Vec<f64>,
}

impl Default for Lorenz63Model {
    fn default() -> Self {
        let s = 10f64.sqrt().ln();
        Self {
            names: PARAMS.iter().map(|s| s.to_string()).collect::<Vec<_>>().into(),
            truth: vec![10f64.ln(), 28f64.ln(), (8.0f64 / 3.0).ln(), s, s, s],
            dt: 0.01,
            inner_steps: 20,
            obs_var: 2.0,
            x0: vec![0.0; 3],
        }
    }
}

impl Lorenz63Model {
    pub(crate) fn configure(reader: &mut OverrideReader<'_>) -> Result<Self> {
        let mut m = Self::default();
        let names = m.names.clone();
        reader.params(&names, &mut m.truth)?;
        m.dt = reader.positive("dt", m.dt)?;
        m.inner_steps = reader.count("inner_steps", m.inner_steps)?;
        m.obs_var = reader.nonnegative("obs_var", m.obs_var)?;
        m.x0 = reader.list("x0", &m.x0)?;
        Ok(m)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn inner_steps(&self) -> usize {
        self.inner_steps
    }
}

impl SsmModel for Lorenz63Model {
    fn name(&self) -> &str {
        "lorenz63"
    }

    fn param_names(&self) -> Arc<[String]> {
        self.names.clone()
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn obs_dim(&self) -> usize {
        3
    }

    fn normal_draw_count(&self) -> Option<usize> {
        Some(3 * self.inner_steps)
    }

    fn observation_interval(&self) -> f64 {
        self.dt * self.inner_steps as f64
    }

    fn true_params(&self) -> ParamVector {
        ParamVector::new(self.names.clone(), self.truth.clone()).expect("defaults are finite")
    }

    fn log_prior(&self, v: &[f64]) -> f64 {
        v.iter().map(|&phi| log_exponential_logpdf(phi, PRIOR_RATE)).sum()
    }

    fn bind(&self, theta: &ParamVector) -> Result<Box<dyn BoundModel + '_>> {
        self.check_dim(theta)?;
        let e: Vec<f64> = theta.values().iter().map(|v| v.exp()).collect();
        let obs = ObsModel::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3) * self.obs_var)?;
        Ok(Box::new(BoundLorenz {
            theta: [e[0], e[1], e[2]],
            sigma: [e[3], e[4], e[5]],
            model: self,
            obs,
        }))
    }
}

struct BoundLorenz<'a> {
    theta: [f64; 3],
    sigma: [f64; 3],
    model: &'a Lorenz63Model,
    obs: ObsModel,
}

impl BoundModel for BoundLorenz<'_> {
    fn state_dim(&self) -> usize {
        3
    }

    fn obs(&self) -> &ObsModel {
        &self.obs
    }

    fn normal_draw_count(&self) -> Option<usize> {
        Some(3 * self.model.inner_steps)
    }

    fn init_with_normals(&self, x: &mut [f64], _z: &[f64]) {
        x.copy_from_slice(&self.model.x0);
    }

    fn advance(&self, x: &mut [f64], rng: &mut RngStream) -> Result<()> {
        let z = rng.standard_normals(3 * self.model.inner_steps);
        self.advance_with_normals(x, &z)
    }

    fn advance_with_normals(&self, x: &mut [f64], z: &[f64]) -> Result<()> {
        lorenz_evolve(x, &self.theta, &self.sigma, self.model.dt, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const THETA: [f64; 3] = [10.0, 28.0, 8.0 / 3.0];

    #[test]
    fn origin_is_fixed_without_noise() {
        let mut x = [0.0; 3];
        lorenz_evolve(&mut x, &THETA, &[3.0; 3], 0.01, &[0.0; 60]).unwrap();
        assert_eq!(x, [0.0; 3]);
    }

    #[test]
    fn single_step_arithmetic() {
        let mut x = [1.0; 3];
        lorenz_evolve(&mut x, &THETA, &[1.0; 3], 0.01, &[0.0; 3]).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 1.26, epsilon = 1e-14);
        assert_abs_diff_eq!(x[2], 1.0 - 0.05 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn diffusion_increment_variance() {
        let sigma = [1.0, 2.0, 3.0];
        let dt = 0.01;
        let mut s = RngStream::new(5, 0);
        let n = 100_000;
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let mut x = [0.0; 3];
            let z = s.standard_normals(3);
            lorenz_evolve(&mut x, &[0.0; 3], &sigma, dt, &z).unwrap();
            for i in 0..3 {
                sq[i] += x[i] * x[i];
            }
        }
        for i in 0..3 {
            let v = sigma[i] * sigma[i] * dt;
            // sd of the sample variance is v sqrt(2/n)
            assert!((sq[i] / n as f64 - v).abs() < 4.0 * v * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn blow_up_reports_step() {
        let mut x = [1e200, 1e200, 1e200];
        let err = lorenz_evolve(&mut x, &THETA, &[1.0; 3], 0.01, &[0.0; 9]).unwrap_err();
        assert_eq!(err, Error::NonFiniteState { step: 1 });
    }

    #[test]
    fn observation_map_is_identity() {
        let m = Lorenz63Model::default();
        let b = m.bind(&m.true_params()).unwrap();
        assert_eq!(b.obs().p, DMatrix::identity(3, 3));
        assert_eq!(b.obs().s, DMatrix::identity(3, 3) * 2.0);
        assert_eq!(m.normal_draw_count(), Some(60));
        assert_abs_diff_eq!(m.observation_interval(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn prior_is_rate_one_tenth_on_natural_scale() {
        let m = Lorenz63Model::default();
        let theta = m.params(vec![0.0; 6]).unwrap();
        // each component: density of Exp(0.1) at 1, times the Jacobian 1
        let oracle = 6.0 * (0.1f64.ln() - 0.1);
        assert_abs_diff_eq!(m.prior_logpdf(&theta).unwrap(), oracle, epsilon = 1e-12);
    }
}
