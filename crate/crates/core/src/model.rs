//! The state space model contract shared by every filter.
//!
//! A model has a latent Markov state `x_t` observed through the linear-Gaussian
//! map `y_t | x_t ~ N(P x_t, S(theta))`. Implementations of [`SsmModel`] are
//! immutable; [`SsmModel::bind`] resolves a parameter vector once into a
//! [`BoundModel`] that the filters drive for a whole run.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, LN_2PI};
use crate::rng::RngStream;

/// Parameter vector in the sampler's coordinates (some entries may be log
/// transformed; see each model's parameter names).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    names: Arc<[String]>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(names: Arc<[String]>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: names.len(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite parameter value {v}")));
        }
        Ok(Self { names, values })
    }

    /// Same names, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.names.clone(), values)
    }

    pub fn names(&self) -> &Arc<[String]> {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// Observation map `P` and noise covariance `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsModel {
    pub p: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl ObsModel {
    pub fn new(p: DMatrix<f64>, s: DMatrix<f64>) -> Result<Self> {
        if s.nrows() != p.nrows() || !s.is_square() {
            return Err(Error::DimensionMismatch {
                what: "observation covariance",
                expected: p.nrows(),
                got: s.nrows(),
            });
        }
        if !linalg::is_symmetric(&s, 1e-12) {
            return Err(Error::InvalidArgument("observation covariance is not symmetric".into()));
        }
        let eig = s.clone().symmetric_eigenvalues();
        if eig.iter().any(|&v| v < -1e-12 || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "observation covariance has a negative eigenvalue".into(),
            ));
        }
        Ok(Self { p, s })
    }

    pub fn obs_dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.p.ncols()
    }

    /// Factorized observation density; fails when `S` is singular.
    pub fn density(&self) -> Result<ObsDensity> {
        ObsDensity::new(self)
    }
}

/// `log N(y; P x, S)` with `S` factorized once.
#[derive(Clone, Debug)]
pub struct ObsDensity {
    dy: usize,
    dx: usize,
    // row-major P and lower Cholesky factor of S
    p: Vec<f64>,
    l: Vec<f64>,
    log_norm: f64,
}

const STACK_DIM: usize = 8;

impl ObsDensity {
    fn new(obs: &ObsModel) -> Result<Self> {
        let chol = obs
            .s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularCovariance("observation noise S".into()))?;
        let (dy, dx) = obs.p.shape();
        let lm = chol.l();
        let p = (0..dy).flat_map(|i| (0..dx).map(move |j| (i, j))).map(|ij| obs.p[ij]).collect();
        let l = (0..dy).flat_map(|i| (0..dy).map(move |j| (i, j))).map(|ij| lm[ij]).collect();
        let log_norm = -0.5 * (dy as f64 * LN_2PI + linalg::chol_log_det(&chol));
        Ok(Self { dy, dx, p, l, log_norm })
    }

    /// Log density for slices; `y` has length `d_y`, `x` length `d_x`.
    pub fn log_pdf_slice(&self, y: &[f64], x: &[f64]) -> f64 {
        debug_assert_eq!(y.len(), self.dy);
        debug_assert_eq!(x.len(), self.dx);
        if self.dy <= STACK_DIM {
            let mut buf = [0.0; STACK_DIM];
            self.quad(y, x, &mut buf[..self.dy])
        } else {
            let mut buf = vec![0.0; self.dy];
            self.quad(y, x, &mut buf)
        }
    }

    fn quad(&self, y: &[f64], x: &[f64], r: &mut [f64]) -> f64 {
        let (dy, dx) = (self.dy, self.dx);
        let mut q = 0.0;
        for i in 0..dy {
            let row = &self.p[i * dx..(i + 1) * dx];
            let px: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            // forward substitution against L
            let mut v = y[i] - px;
            for j in 0..i {
                v -= self.l[i * dy + j] * r[j];
            }
            v /= self.l[i * dy + i];
            r[i] = v;
            q += v * v;
        }
        self.log_norm - 0.5 * q
    }

    pub fn log_pdf(&self, y: &DVector<f64>, x: &[f64]) -> f64 {
        self.log_pdf_slice(y.as_slice(), x)
    }

    /// Largest attainable value, `log N(0; 0, S)`.
    pub fn log_peak(&self) -> f64 {
        self.log_norm
    }
}

/// A state space model family with a prior over its parameters.
pub trait SsmModel: Send + Sync {
    fn name(&self) -> &str;

    fn param_names(&self) -> Arc<[String]>;

    fn state_dim(&self) -> usize;

    fn obs_dim(&self) -> usize;

    /// Standard normals consumed by one observation interval of evolution,
    /// when the dynamics are a fixed-size transform of normals.
    fn normal_draw_count(&self) -> Option<usize> {
        None
    }

    /// Time between observations in the model's own units.
    fn observation_interval(&self) -> f64 {
        1.0
    }

    /// Whether simulated datasets carry an observation at time 0.
    fn observes_initial_state(&self) -> bool {
        false
    }

    /// Parameter values used for data simulation by default.
    fn true_params(&self) -> ParamVector;

    /// Log prior density of raw values (length already checked).
    fn log_prior(&self, values: &[f64]) -> f64;

    fn prior_logpdf(&self, theta: &ParamVector) -> Result<f64> {
        self.check_dim(theta)?;
        Ok(self.log_prior(theta.values()))
    }

    fn bind(&self, theta: &ParamVector) -> Result<Box<dyn BoundModel + '_>>;

    /// Exact linear-Gaussian form, for models that have one.
    fn linear_gaussian(&self, _theta: &ParamVector) -> Option<crate::filters::LinearGaussianSpec> {
        None
    }

    fn check_dim(&self, theta: &ParamVector) -> Result<()> {
        let expected = self.param_names().len();
        if theta.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected,
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn params(&self, values: Vec<f64>) -> Result<ParamVector> {
        ParamVector::new(self.param_names(), values)
    }
}

/// A model with its parameters resolved, ready to be propagated.
pub trait BoundModel: Send + Sync {
    fn state_dim(&self) -> usize;

    /// Observation map used inside the filters.
    fn obs(&self) -> &ObsModel;

    /// Observation noise used when simulating data (defaults to the filter's).
    fn simulation_obs_cov(&self) -> &DMatrix<f64> {
        &self.obs().s
    }

    fn normal_draw_count(&self) -> Option<usize> {
        None
    }

    /// Standard normals consumed by [`BoundModel::init_with_normals`].
    fn init_normal_count(&self) -> usize {
        0
    }

    fn init_with_normals(&self, x: &mut [f64], z: &[f64]);

    fn init(&self, x: &mut [f64], rng: &mut RngStream) {
        let k = self.init_normal_count();
        if k == 0 {
            self.init_with_normals(x, &[]);
        } else {
            let z = rng.standard_normals(k);
            self.init_with_normals(x, &z);
        }
    }

    /// Propagates `x` in place over one observation interval.
    fn advance(&self, x: &mut [f64], rng: &mut RngStream) -> Result<()>;

    /// Same as [`BoundModel::advance`] driven by exactly
    /// `normal_draw_count()` supplied normals.
    fn advance_with_normals(&self, _x: &mut [f64], _z: &[f64]) -> Result<()> {
        Err(Error::Unsupported {
            model: "bound model".into(),
            feature: "normal-driven evolution",
        })
    }

    /// Hook applied to each ensemble member after an ensemble Kalman shift.
    fn constrain(&self, _x: &mut [f64]) {}
}

/// Observation sequence. An observation at time 0 (the first time equal to 0)
/// is treated as `y_0` and is assimilated before any evolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    times: Vec<f64>,
    observations: Vec<DVector<f64>>,
}

impl Dataset {
    pub fn new(times: Vec<f64>, observations: Vec<DVector<f64>>) -> Result<Self> {
        if times.len() != observations.len() {
            return Err(Error::DimensionMismatch {
                what: "dataset rows",
                expected: times.len(),
                got: observations.len(),
            });
        }
        if times.is_empty() {
            return Err(Error::InvalidArgument("dataset has no observations".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("observation times must be strictly increasing".into()));
        }
        let d = observations[0].len();
        if let Some(bad) = observations.iter().find(|y| y.len() != d) {
            return Err(Error::DimensionMismatch {
                what: "observation vector",
                expected: d,
                got: bad.len(),
            });
        }
        if observations.iter().any(|y| y.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("observations must be finite".into()));
        }
        Ok(Self { times, observations })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn observations(&self) -> &[DVector<f64>] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations[0].len()
    }

    pub fn has_initial(&self) -> bool {
        self.times[0] == 0.0
    }

    /// Number of evolution intervals the filters traverse.
    pub fn transitions(&self) -> usize {
        self.len() - usize::from(self.has_initial())
    }

    /// Keeps every `k`-th observation starting from the first.
    pub fn thin(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("thinning factor must be positive".into()));
        }
        let times = self.times.iter().step_by(k).copied().collect();
        let obs = self.observations.iter().step_by(k).cloned().collect();
        Self::new(times, obs)
    }

    /// Restricts to observations with time `<= t_max`.
    pub fn truncate_time(&self, t_max: f64) -> Result<Self> {
        let n = self.times.iter().take_while(|&&t| t <= t_max).count();
        Self::new(self.times[..n].to_vec(), self.observations[..n].to_vec())
    }

    pub(crate) fn check_against(&self, model: &dyn BoundModel) -> Result<()> {
        if self.obs_dim() != model.obs().obs_dim() {
            return Err(Error::DimensionMismatch {
                what: "dataset observation dimension",
                expected: model.obs().obs_dim(),
                got: self.obs_dim(),
            });
        }
        Ok(())
    }
}

/// `log N(y; P x, S(theta))`.
pub fn observe_logpdf(
    model: &dyn SsmModel,
    theta: &ParamVector,
    y: &DVector<f64>,
    x: &[f64],
) -> Result<f64> {
    let bound = model.bind(theta)?;
    let obs = bound.obs();
    if y.len() != obs.obs_dim() {
        return Err(Error::DimensionMismatch {
            what: "observation vector",
            expected: obs.obs_dim(),
            got: y.len(),
        });
    }
    if x.len() != obs.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "state vector",
            expected: obs.state_dim(),
            got: x.len(),
        });
    }
    Ok(obs.density()?.log_pdf(y, x))
}

/// `log N(x; mean, sd^2)` for scalars.
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

/// Log density of an exponential distribution; `-inf` outside `(0, inf)`.
pub fn exponential_logpdf(x: f64, rate: f64) -> f64 {
    if x > 0.0 {
        rate.ln() - rate * x
    } else {
        f64::NEG_INFINITY
    }
}

/// Log density of `phi = log(c)` when `c ~ Exp(rate)`, Jacobian included.
pub fn log_exponential_logpdf(phi: f64, rate: f64) -> f64 {
    rate.ln() - rate * phi.exp() + phi
}
