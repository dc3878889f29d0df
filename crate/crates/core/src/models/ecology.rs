//! Single-species population models on the log scale.
//!
//! The state is `log n_t`, observed as `y_t ~ N(log n_t, sigma_e^2)`, with
//! process noise `N(0, sigma_w^2)`. The initial state is a point mass at the
//! `log_n0` parameter, which carries a flat improper prior.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::OverrideReader;
use crate::error::{Error, Result};
use crate::model::{exponential_logpdf, normal_logpdf, BoundModel, ObsModel, ParamVector, SsmModel};
use crate::rng::RngStream;

const LOG_N_BOUND: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EcologyVariant {
    /// `log n' = log n + b0 + b1 n + e`
    Ricker,
    /// `log n' = log n + b0 + b2 n^b3 + e`
    ThetaLogistic,
    /// `log n' = 2 log n + b0 + b1 n - log(b4 + n) + e`
    MateLimited,
    /// `log n' = log n + b0 + b1 n + b5 n^2 + e`
    FlexibleAllee,
}

impl EcologyVariant {
    pub fn name(&self) -> &'static str {
        match self {
            EcologyVariant::Ricker => "ricker",
            EcologyVariant::ThetaLogistic => "theta-logistic",
            EcologyVariant::MateLimited => "mate-limited",
            EcologyVariant::FlexibleAllee => "flexible-allee",
        }
    }

    /// Names of the two or three growth coefficients.
    fn betas(&self) -> &'static [&'static str] {
        match self {
            EcologyVariant::Ricker => &["beta0", "beta1"],
            EcologyVariant::ThetaLogistic => &["beta0", "beta2", "beta3"],
            EcologyVariant::MateLimited => &["beta0", "beta1", "beta4"],
            EcologyVariant::FlexibleAllee => &["beta0", "beta1", "beta5"],
        }
    }

    fn default_betas(&self) -> &'static [f64] {
        // Each default has a stable equilibrium near n = 100.
        match self {
            EcologyVariant::Ricker => &[1.0, -0.01],
            EcologyVariant::ThetaLogistic => &[1.0, -0.1, 0.5],
            EcologyVariant::MateLimited => &[1.1, -0.01, 10.0],
            EcologyVariant::FlexibleAllee => &[1.0, -0.005, -5e-5],
        }
    }
}

/// Coefficients of one growth step; unused entries are ignored.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Growth {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub b5: f64,
}

/// One step of the population recursion given the process noise `eps`.
pub fn ecology_evolve(variant: EcologyVariant, g: &Growth, log_n: f64, eps: f64) -> f64 {
    let l = log_n.clamp(-LOG_N_BOUND, LOG_N_BOUND);
    let n = l.exp();
    let next = match variant {
        EcologyVariant::Ricker => l + g.b0 + g.b1 * n + eps,
        EcologyVariant::ThetaLogistic => l + g.b0 + g.b2 * (g.b3 * l).exp() + eps,
        EcologyVariant::MateLimited => 2.0 * l + g.b0 + g.b1 * n - (g.b4 + n).ln() + eps,
        EcologyVariant::FlexibleAllee => l + g.b0 + g.b1 * n + g.b5 * n * n + eps,
    };
    next.clamp(-LOG_N_BOUND, LOG_N_BOUND)
}

#[derive(Clone, Debug)]
pub struct EcologyModel {
    variant: EcologyVariant,
    names: Arc<[String]>,
    truth: Vec<f64>,
}

impl EcologyModel {
    pub fn new(variant: EcologyVariant) -> Self {
        let names: Vec<String> = variant
            .betas()
            .iter()
            .chain(&["sigma_w", "sigma_e", "log_n0"])
            .map(|s| s.to_string())
            .collect();
        let mut truth = variant.default_betas().to_vec();
        truth.extend([0.3, 0.1, 50f64.ln()]);
        Self {
            variant,
            names: names.into(),
            truth,
        }
    }

    pub(crate) fn configure(variant: EcologyVariant, reader: &mut OverrideReader<'_>) -> Result<Self> {
        let mut m = Self::new(variant);
        let names = m.names.clone();
        reader.params(&names, &mut m.truth)?;
        Ok(m)
    }

    pub fn variant(&self) -> EcologyVariant {
        self.variant
    }

    fn growth(&self, v: &[f64]) -> Growth {
        let mut g = Growth::default();
        for (name, &x) in self.variant.betas().iter().zip(v) {
            match *name {
                "beta0" => g.b0 = x,
                "beta1" => g.b1 = x,
                "beta2" => g.b2 = x,
                "beta3" => g.b3 = x,
                "beta4" => g.b4 = x,
                _ => g.b5 = x,
            }
        }
        g
    }
}

impl SsmModel for EcologyModel {
    fn name(&self) -> &str {
        self.variant.name()
    }

    fn param_names(&self) -> Arc<[String]> {
        self.names.clone()
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn normal_draw_count(&self) -> Option<usize> {
        Some(1)
    }

    fn true_params(&self) -> ParamVector {
        ParamVector::new(self.names.clone(), self.truth.clone()).expect("defaults are finite")
    }

    fn log_prior(&self, v: &[f64]) -> f64 {
        let k = self.variant.betas().len();
        let mut lp = 0.0;
        for (name, &x) in self.variant.betas().iter().zip(v) {
            lp += if *name == "beta4" {
                exponential_logpdf(x, 1.0)
            } else {
                normal_logpdf(x, 0.0, 1.0)
            };
        }
        lp + exponential_logpdf(v[k], 1.0) + exponential_logpdf(v[k + 1], 1.0)
    }

    fn bind(&self, theta: &ParamVector) -> Result<Box<dyn BoundModel + '_>> {
        self.check_dim(theta)?;
        let v = theta.values();
        let k = self.variant.betas().len();
        let (sigma_w, sigma_e, log_n0) = (v[k], v[k + 1], v[k + 2]);
        let growth = self.growth(v);
        if sigma_w < 0.0 || sigma_e < 0.0 {
            return Err(Error::InvalidArgument("noise scales must be nonnegative".into()));
        }
        if self.variant == EcologyVariant::MateLimited && growth.b4 <= 0.0 {
            return Err(Error::InvalidArgument("beta4 must be positive".into()));
        }
        let obs = ObsModel::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, sigma_e * sigma_e))?;
        Ok(Box::new(BoundEcology {
            variant: self.variant,
            growth,
            sigma_w,
            log_n0,
            obs,
        }))
    }
}

struct BoundEcology {
    variant: EcologyVariant,
    growth: Growth,
    sigma_w: f64,
    log_n0: f64,
    obs: ObsModel,
}

impl BoundModel for BoundEcology {
    fn state_dim(&self) -> usize {
        1
    }

    fn obs(&self) -> &ObsModel {
        &self.obs
    }

    fn normal_draw_count(&self) -> Option<usize> {
        Some(1)
    }

    fn init_with_normals(&self, x: &mut [f64], _z: &[f64]) {
        x[0] = self.log_n0;
    }

    fn advance(&self, x: &mut [f64], rng: &mut RngStream) -> Result<()> {
        let z = rng.standard_normal();
        self.advance_with_normals(x, &[z])
    }

    fn advance_with_normals(&self, x: &mut [f64], z: &[f64]) -> Result<()> {
        let next = ecology_evolve(self.variant, &self.growth, x[0], self.sigma_w * z[0]);
        if next.is_nan() {
            return Err(Error::NonFiniteState { step: 1 });
        }
        x[0] = next;
        Ok(())
    }

    fn constrain(&self, x: &mut [f64]) {
        x[0] = x[0].clamp(-LOG_N_BOUND, LOG_N_BOUND);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ricker_step_arithmetic() {
        let g = Growth {
            b0: 0.1,
            b1: -0.1,
            ..Growth::default()
        };
        assert_abs_diff_eq!(ecology_evolve(EcologyVariant::Ricker, &g, 0.0, 0.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn flexible_allee_nests_ricker() {
        for (b0, b1, eps, l) in [(0.3, -0.02, 0.5, 2.0), (-1.0, 0.4, -0.7, -1.0), (2.0, -1.5, 0.0, 0.3)] {
            let g = Growth {
                b0,
                b1,
                b5: 0.0,
                ..Growth::default()
            };
            assert_eq!(
                ecology_evolve(EcologyVariant::FlexibleAllee, &g, l, eps),
                ecology_evolve(EcologyVariant::Ricker, &g, l, eps)
            );
        }
    }

    #[test]
    fn mate_limited_large_beta4() {
        let g = Growth {
            b0: 0.5,
            b1: -0.01,
            b4: 1e8,
            ..Growth::default()
        };
        let l = 3.0f64;
        let n = l.exp();
        let direct = 2.0 * l + 0.5 - 0.01 * n - (1e8 + n).ln();
        assert_abs_diff_eq!(ecology_evolve(EcologyVariant::MateLimited, &g, l, 0.0), direct, epsilon = 1e-12);
        assert!(direct < 2.0 * l + 0.5 - 0.01 * n - 18.0);
    }

    #[test]
    fn overflow_is_clamped() {
        let g = Growth {
            b0: 1000.0,
            ..Growth::default()
        };
        let v = ecology_evolve(EcologyVariant::Ricker, &g, 0.0, 0.0);
        assert_eq!(v, LOG_N_BOUND);
        assert!(v.exp().is_finite());
    }

    #[test]
    fn prior_components() {
        let m = EcologyModel::new(EcologyVariant::Ricker);
        let theta = m.params(vec![0.0, 0.0, 0.5, 0.5, 12.0]).unwrap();
        let lp = m.prior_logpdf(&theta).unwrap();
        // scalar oracle: two standard normals at 0 and two Exp(1) at 0.5
        let oracle = 2.0 * (-0.5 * (2.0 * std::f64::consts::PI).ln()) + 2.0 * (-0.5);
        assert_abs_diff_eq!(lp, oracle, epsilon = 1e-12);
        let bad = m.params(vec![0.0, 0.0, -1.0, 0.5, 0.0]).unwrap();
        assert_eq!(m.prior_logpdf(&bad).unwrap(), f64::NEG_INFINITY);
        let short = ParamVector::new(vec!["beta0".to_string()].into(), vec![0.0]).unwrap();
        assert!(m.prior_logpdf(&short).is_err());
    }

    #[test]
    fn log_n0_prior_is_flat() {
        let m = EcologyModel::new(EcologyVariant::MateLimited);
        let at = |l: f64| m.prior_logpdf(&m.params(vec![0.1, -0.1, 2.0, 0.3, 0.2, l]).unwrap()).unwrap();
        assert_eq!(at(-50.0), at(80.0));
    }

    #[test]
    fn default_truths_sit_near_one_hundred() {
        for v in [
            EcologyVariant::Ricker,
            EcologyVariant::ThetaLogistic,
            EcologyVariant::MateLimited,
            EcologyVariant::FlexibleAllee,
        ] {
            let m = EcologyModel::new(v);
            let g = m.growth(&m.truth);
            let l = 100f64.ln();
            assert_abs_diff_eq!(ecology_evolve(v, &g, l, 0.0), l, epsilon = 0.01);
        }
    }
}
