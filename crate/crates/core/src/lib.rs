//! Bayesian parameter inference for state space models with pseudo-marginal
//! Metropolis–Hastings, using particle filter or ensemble Kalman filter
//! likelihood estimates.

pub mod diagnostics;
pub mod error;
pub mod filters;
mod linalg;
pub mod mcmc;
pub mod model;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
pub use model::{BoundModel, Dataset, ObsModel, ParamVector, SsmModel};
pub use rng::RngStream;
