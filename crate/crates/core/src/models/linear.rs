//! Linear-Gaussian test model with an unknown initial mean.
//!
//! `x_0 ~ N(mu 1, p0 I)`, `x_t = a x_{t-1} + N(0, q I)`, `y_t = x_t + N(0, s I)`.
//! With the normal prior on `mu` the posterior is available in closed form,
//! and the likelihood is exact under the Kalman filter.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::OverrideReader;
use crate::error::Result;
use crate::filters::LinearGaussianSpec;
use crate::model::{normal_logpdf, BoundModel, ObsModel, ParamVector, SsmModel};
use crate::rng::RngStream;

#[derive(Clone, Debug)]
pub struct LinearGaussianModel {
    names: Arc<[String]>,
    dim: usize,
    a: f64,
    q: f64,
    s: f64,
    p0: f64,
    prior_mean: f64,
    prior_var: f64,
    mu: f64,
}

impl Default for LinearGaussianModel {
    fn default() -> Self {
        Self {
            names: vec!["mu".to_string()].into(),
            dim: 2,
            a: 0.9,
            q: 1.0,
            s: 1.0,
            p0: 1.0,
            prior_mean: 0.0,
            prior_var: 10.0,
            mu: 1.0,
        }
    }
}

impl LinearGaussianModel {
    pub(crate) fn configure(reader: &mut OverrideReader<'_>) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            dim: reader.count("dim", d.dim)?,
            a: reader.number("a", d.a)?,
            q: reader.nonnegative("q", d.q)?,
            s: reader.positive("s", d.s)?,
            p0: reader.nonnegative("p0", d.p0)?,
            prior_mean: reader.number("prior_mean", d.prior_mean)?,
            prior_var: reader.positive("prior_var", d.prior_var)?,
            mu: reader.number("mu", d.mu)?,
            names: d.names,
        })
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_var
    }

    fn spec(&self, mu: f64) -> LinearGaussianSpec {
        let d = self.dim;
        let eye = DMatrix::<f64>::identity(d, d);
        LinearGaussianSpec {
            a: &eye * self.a,
            q: &eye * self.q,
            p: eye.clone(),
            s: &eye * self.s,
            m0: DVector::from_element(d, mu),
            p0: &eye * self.p0,
        }
    }
}

impl SsmModel for LinearGaussianModel {
    fn name(&self) -> &str {
        "linear-gaussian"
    }

    fn param_names(&self) -> Arc<[String]> {
        self.names.clone()
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn obs_dim(&self) -> usize {
        self.dim
    }

    fn normal_draw_count(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn true_params(&self) -> ParamVector {
        ParamVector::new(self.names.clone(), vec![self.mu]).expect("default is finite")
    }

    fn log_prior(&self, v: &[f64]) -> f64 {
        normal_logpdf(v[0], self.prior_mean, self.prior_var.sqrt())
    }

    fn bind(&self, theta: &ParamVector) -> Result<Box<dyn BoundModel + '_>> {
        self.check_dim(theta)?;
        let d = self.dim;
        let obs = ObsModel::new(DMatrix::identity(d, d), DMatrix::identity(d, d) * self.s)?;
        Ok(Box::new(BoundLinear {
            model: self,
            mu: theta.values()[0],
            obs,
        }))
    }

    fn linear_gaussian(&self, theta: &ParamVector) -> Option<LinearGaussianSpec> {
        Some(self.spec(*theta.values().first()?))
    }
}

struct BoundLinear<'a> {
    model: &'a LinearGaussianModel,
    mu: f64,
    obs: ObsModel,
}

impl BoundModel for BoundLinear<'_> {
    fn state_dim(&self) -> usize {
        self.model.dim
    }

    fn obs(&self) -> &ObsModel {
        &self.obs
    }

    fn normal_draw_count(&self) -> Option<usize> {
        Some(self.model.dim)
    }

    fn init_normal_count(&self) -> usize {
        self.model.dim
    }

    fn init_with_normals(&self, x: &mut [f64], z: &[f64]) {
        let sd = self.model.p0.sqrt();
        for (xi, zi) in x.iter_mut().zip(z) {
            *xi = self.mu + sd * zi;
        }
    }

    fn advance(&self, x: &mut [f64], rng: &mut RngStream) -> Result<()> {
        let z = rng.standard_normals(self.model.dim);
        self.advance_with_normals(x, &z)
    }

    fn advance_with_normals(&self, x: &mut [f64], z: &[f64]) -> Result<()> {
        let sd = self.model.q.sqrt();
        for (xi, zi) in x.iter_mut().zip(z) {
            *xi = self.model.a * *xi + sd * zi;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_matches_bound_model() {
        let m = LinearGaussianModel::default();
        let theta = m.params(vec![2.5]).unwrap();
        let spec = m.linear_gaussian(&theta).unwrap();
        assert_eq!(spec.m0.as_slice(), &[2.5, 2.5]);
        let b = m.bind(&theta).unwrap();
        let mut x = [0.0; 2];
        b.init_with_normals(&mut x, &[0.0, 0.0]);
        assert_eq!(x, [2.5, 2.5]);
        b.advance_with_normals(&mut x, &[1.0, -1.0]).unwrap();
        assert_eq!(x, [0.9 * 2.5 + 1.0, 0.9 * 2.5 - 1.0]);
        assert_eq!(b.obs().p, spec.p);
        assert_eq!(b.obs().s, spec.s);
    }
}
