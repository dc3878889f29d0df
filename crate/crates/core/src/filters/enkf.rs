//! Stochastic ensemble Kalman filter likelihood.
//!
//! Randomness can come from a pseudo-random stream, from a pre-drawn
//! [`NormalBlock`] (used by the correlated sampler), or from a fresh scrambled
//! Sobol point set per time step. Stream and block modes consume normals in
//! the same [`BlockLayout`] order, so a block sampled from a stream reproduces
//! the stream-driven run exactly.
//!
//! Under quasi-Monte Carlo each member's point at step `t` supplies both the
//! pseudo-observation noise of the shift at `t - 1` and the evolution noise
//! into `t`; the shift is deferred until that point is drawn.

use nalgebra::{DMatrix, DVector};

use super::gaussian::unbiased_gaussian_logpdf;
use super::{DensityKind, Ensemble, EstimatorKind, ForecastMoments, LogLikelihoodEstimate};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{BoundModel, Dataset, ObsModel, ParamVector, SsmModel};
use crate::rng::{normal_quantile, BlockLayout, NormalBlock, RngStream, SobolSampler};

/// Source of randomness for [`enkf_loglik`].
pub enum EnkfNoise<'a> {
    Stream(&'a mut RngStream),
    Block(&'a NormalBlock),
}

pub(crate) enum Noise<'a> {
    Stream(&'a mut RngStream),
    Block(&'a NormalBlock),
    Rqmc(&'a mut RngStream),
}

/// Called before the first factor with `(0, 0.0)` and after every factor with
/// the number of factors folded in and the running log-likelihood. Returning
/// `false` stops the filter.
pub(crate) type EnkfMonitor<'a> = &'a mut dyn FnMut(usize, f64) -> bool;

pub(crate) struct EnkfOutcome {
    pub estimate: LogLikelihoodEstimate,
    pub stopped: bool,
}

/// A shift waiting for its pseudo-observation noise.
#[derive(Clone, Debug, PartialEq)]
pub struct PendingShift {
    /// `d_x x d_y` gain.
    pub gain: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl PendingShift {
    /// Gain computed from the moments of `forecast`.
    pub fn from_forecast(forecast: &Ensemble, obs: &ObsModel, y: DVector<f64>) -> Result<Self> {
        let gain = super::kalman_gain(&forecast.moments(), obs)?;
        Ok(Self { gain, y })
    }
}

/// Size and layout of the normal block driving one filter run.
pub fn enkf_block_layout(
    model: &dyn SsmModel,
    theta: &ParamVector,
    data: &Dataset,
    n: usize,
) -> Result<BlockLayout> {
    let bound = model.bind(theta)?;
    layout_for(bound.as_ref(), model.name(), data, n)
}

fn layout_for(bound: &dyn BoundModel, name: &str, data: &Dataset, n: usize) -> Result<BlockLayout> {
    let m = bound.normal_draw_count().ok_or_else(|| Error::Unsupported {
        model: name.to_string(),
        feature: "normal-driven evolution",
    })?;
    let dy = bound.obs().obs_dim();
    Ok(BlockLayout {
        members: n,
        head: bound.init_normal_count() + if data.has_initial() { dy } else { 0 },
        steps: data.transitions(),
        obs_dim: dy,
        evolution: m,
    })
}

fn check_members(n: usize, density: DensityKind, dy: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument("ensemble filter needs at least two members".into()));
    }
    if density == DensityKind::Unbiased && n <= dy + 3 {
        return Err(Error::InvalidArgument(format!(
            "unbiased density needs more than {} members, got {n}",
            dy + 3
        )));
    }
    Ok(())
}

/// Ensemble Kalman filter log-likelihood estimate.
pub fn enkf_loglik(
    model: &dyn SsmModel,
    theta: &ParamVector,
    data: &Dataset,
    n: usize,
    noise: EnkfNoise<'_>,
    density: DensityKind,
) -> Result<LogLikelihoodEstimate> {
    model.check_dim(theta)?;
    let bound = model.bind(theta)?;
    let noise = match noise {
        EnkfNoise::Stream(s) => Noise::Stream(s),
        EnkfNoise::Block(b) => Noise::Block(b),
    };
    Ok(run_enkf(bound.as_ref(), model.name(), data, n, density, noise, &mut |_, _| true)?.estimate)
}

/// Ensemble Kalman filter log-likelihood with scrambled Sobol forecast noise.
///
/// `stream` supplies the initial-state normals and the scramble seeds.
pub fn enkf_loglik_rqmc(
    model: &dyn SsmModel,
    theta: &ParamVector,
    data: &Dataset,
    n: usize,
    stream: &mut RngStream,
) -> Result<LogLikelihoodEstimate> {
    model.check_dim(theta)?;
    let bound = model.bind(theta)?;
    Ok(run_enkf(
        bound.as_ref(),
        model.name(),
        data,
        n,
        DensityKind::Plugin,
        Noise::Rqmc(stream),
        &mut |_, _| true,
    )?
    .estimate)
}

struct Workspace {
    dx: usize,
    dy: usize,
    p: Vec<f64>,
    ls: Vec<f64>,
    ytilde: Vec<f64>,
}

impl Workspace {
    /// `out = P x + L_S z`.
    fn pseudo_obs(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        let (dx, dy) = (self.dx, self.dy);
        for r in 0..dy {
            let mut v = 0.0;
            for c in 0..dx {
                v += self.p[r * dx + c] * x[c];
            }
            for c in 0..dy {
                v += self.ls[r * dy + c] * z[c];
            }
            out[r] = v;
        }
    }

    /// `x += K (y - ytilde)` with row-major `K`.
    fn apply_gain(&self, x: &mut [f64], gain: &[f64], y: &[f64], ytilde: &[f64]) {
        let dy = self.dy;
        for (r, xr) in x.iter_mut().enumerate() {
            let mut v = 0.0;
            for c in 0..dy {
                v += gain[r * dy + c] * (y[c] - ytilde[c]);
            }
            *xr += v;
        }
    }

    fn shift(&mut self, bound: &dyn BoundModel, x: &mut [f64], gain: &[f64], y: &[f64], z: &[f64]) {
        let mut yt = std::mem::take(&mut self.ytilde);
        self.pseudo_obs(x, z, &mut yt);
        self.apply_gain(x, gain, y, &yt);
        bound.constrain(x);
        self.ytilde = yt;
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])).collect()
}

enum Mode {
    Normals { m: usize },
    StreamOnly,
    Rqmc { m: usize },
}

pub(crate) fn run_enkf(
    bound: &dyn BoundModel,
    name: &str,
    data: &Dataset,
    n: usize,
    density: DensityKind,
    mut noise: Noise<'_>,
    monitor: EnkfMonitor<'_>,
) -> Result<EnkfOutcome> {
    data.check_against(bound)?;
    let obs = bound.obs();
    let (dy, dx) = (obs.obs_dim(), obs.state_dim());
    check_members(n, density, dy)?;
    let mode = match (&noise, bound.normal_draw_count()) {
        (Noise::Stream(_), None) => Mode::StreamOnly,
        (Noise::Stream(_) | Noise::Block(_), Some(m)) => Mode::Normals { m },
        (Noise::Rqmc(_), Some(m)) => Mode::Rqmc { m },
        (_, None) => {
            return Err(Error::Unsupported {
                model: name.to_string(),
                feature: "normal-driven evolution",
            })
        }
    };
    if let Mode::Rqmc { m } = mode {
        if density == DensityKind::Unbiased {
            return Err(Error::InvalidArgument(
                "quasi-Monte Carlo noise supports the plug-in density only".into(),
            ));
        }
        if dy + m > crate::rng::MAX_SOBOL_DIM {
            return Err(Error::SobolDimension {
                requested: dy + m,
                max: crate::rng::MAX_SOBOL_DIM,
            });
        }
    }
    let layout = match mode {
        Mode::Normals { .. } => Some(layout_for(bound, name, data, n)?),
        _ => None,
    };
    if let (Noise::Block(b), Some(l)) = (&noise, &layout) {
        if b.layout() != l {
            return Err(Error::DimensionMismatch {
                what: "normal block",
                expected: l.len(),
                got: b.len(),
            });
        }
    }

    let ls = row_major(&linalg::psd_sqrt(&obs.s)?);
    let mut ws = Workspace {
        dx,
        dy,
        p: row_major(&obs.p),
        ls,
        ytilde: vec![0.0; dy],
    };

    let mut estimate = LogLikelihoodEstimate {
        value: 0.0,
        estimator: match density {
            DensityKind::Plugin => EstimatorKind::Enkf,
            DensityKind::Unbiased => EstimatorKind::EnkfUnbiased,
        },
        n,
        factors: 0,
        evolutions: 0,
    };
    if !monitor(0, 0.0) {
        return Ok(EnkfOutcome {
            estimate,
            stopped: true,
        });
    }

    let has0 = data.has_initial();
    let mut x = vec![0.0; n * dx];
    // Shift noise for the current observation, member-major.
    let mut zs = vec![0.0; n * dy];
    let mut step_buf = Vec::new();

    match (&mode, &mut noise) {
        (Mode::Normals { .. }, noise) => {
            let layout = layout.expect("layout exists in normals mode");
            let head: std::borrow::Cow<[f64]> = match noise {
                Noise::Block(b) => b.values()[..n * layout.head].into(),
                Noise::Stream(s) => s.standard_normals(n * layout.head).into(),
                Noise::Rqmc(_) => unreachable!(),
            };
            let hy = if has0 { dy } else { 0 };
            for i in 0..n {
                let h = &head[layout.head_range(i)];
                bound.init_with_normals(&mut x[i * dx..(i + 1) * dx], &h[hy..]);
                zs[i * dy..i * dy + hy].copy_from_slice(&h[..hy]);
            }
        }
        (Mode::StreamOnly, Noise::Stream(s)) => {
            for member in x.chunks_exact_mut(dx) {
                bound.init(member, s);
            }
            if has0 {
                s.fill_standard_normals(&mut zs);
            }
        }
        (Mode::Rqmc { .. }, Noise::Rqmc(s)) => {
            for member in x.chunks_exact_mut(dx) {
                bound.init(member, s);
            }
        }
        _ => unreachable!(),
    }

    let total = data.len();
    let mut pending: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut point = Vec::new();
    let mut yt_all = vec![0.0; n * dy];

    for (k, y) in data.observations().iter().enumerate() {
        let initial = k == 0 && has0;
        if !initial {
            let t = if has0 { k } else { k + 1 };
            let outcome = match (&mode, &mut noise) {
                (Mode::Normals { m }, noise) => {
                    let w = dy + m;
                    let sv: &[f64] = match noise {
                        Noise::Block(b) => {
                            let off = n * b.layout().head + (t - 1) * n * w;
                            &b.values()[off..off + n * w]
                        }
                        Noise::Stream(s) => {
                            step_buf.resize(n * w, 0.0);
                            s.fill_standard_normals(&mut step_buf);
                            &step_buf
                        }
                        Noise::Rqmc(_) => unreachable!(),
                    };
                    let mut res = Ok(());
                    for i in 0..n {
                        let slot = &sv[i * w..(i + 1) * w];
                        zs[i * dy..(i + 1) * dy].copy_from_slice(&slot[..dy]);
                        res = bound.advance_with_normals(&mut x[i * dx..(i + 1) * dx], &slot[dy..]);
                        if res.is_err() {
                            break;
                        }
                    }
                    res
                }
                (Mode::StreamOnly, Noise::Stream(s)) => {
                    let mut res = Ok(());
                    for member in x.chunks_exact_mut(dx) {
                        res = bound.advance(member, s);
                        if res.is_err() {
                            break;
                        }
                    }
                    s.fill_standard_normals(&mut zs);
                    res
                }
                (Mode::Rqmc { m }, Noise::Rqmc(s)) => {
                    let w = dy + m;
                    let mut sampler = SobolSampler::scrambled(w, s.next_u64())?;
                    point.resize(w, 0.0);
                    let mut z = vec![0.0; w];
                    let mut res = Ok(());
                    for i in 0..n {
                        sampler.next_point(&mut point);
                        for (zj, &u) in z.iter_mut().zip(&point) {
                            *zj = normal_quantile(u)?;
                        }
                        let member = &mut x[i * dx..(i + 1) * dx];
                        if let Some((gain, yp)) = &pending {
                            ws.shift(bound, member, gain, yp, &z[..dy]);
                        }
                        res = bound.advance_with_normals(member, &z[dy..]);
                        if res.is_err() {
                            break;
                        }
                    }
                    pending = None;
                    res
                }
                _ => unreachable!(),
            };
            estimate.evolutions += n as u64;
            match outcome {
                Ok(()) => {}
                Err(e) if e.is_divergence() => return Ok(zero_outcome(estimate)),
                Err(e) => return Err(e),
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Ok(zero_outcome(estimate));
        }

        let (mean, cov) = linalg::sample_moments(&x, dx);
        let pcov = &obs.p * &cov;
        let innov = &pcov * obs.p.transpose() + &obs.s;
        let chol = linalg::cholesky_jittered(&innov, "innovation covariance")?;
        let log_alpha = match density {
            DensityKind::Plugin => {
                let resid = y - &obs.p * &mean;
                linalg::gaussian_logpdf_chol(&resid, &chol)
            }
            DensityKind::Unbiased => {
                for i in 0..n {
                    ws.pseudo_obs(
                        &x[i * dx..(i + 1) * dx],
                        &zs[i * dy..(i + 1) * dy],
                        &mut yt_all[i * dy..(i + 1) * dy],
                    );
                }
                let (ym, yc) = linalg::sample_moments(&yt_all, dy);
                unbiased_gaussian_logpdf(y, &ym, &yc, n)?
            }
        };
        estimate.value += log_alpha;
        estimate.factors += 1;
        if estimate.value == f64::NEG_INFINITY {
            return Ok(zero_outcome(estimate));
        }
        if !monitor(estimate.factors, estimate.value) {
            return Ok(EnkfOutcome {
                estimate,
                stopped: true,
            });
        }
        if k + 1 == total {
            break;
        }
        let gain = row_major(&chol.solve(&pcov).transpose());
        if let Mode::Rqmc { .. } = mode {
            pending = Some((gain, y.as_slice().to_vec()));
        } else {
            let ys = y.as_slice();
            for i in 0..n {
                ws.shift(bound, &mut x[i * dx..(i + 1) * dx], &gain, ys, &zs[i * dy..(i + 1) * dy]);
            }
        }
    }
    Ok(EnkfOutcome {
        estimate,
        stopped: false,
    })
}

fn zero_outcome(mut estimate: LogLikelihoodEstimate) -> EnkfOutcome {
    estimate.value = f64::NEG_INFINITY;
    EnkfOutcome {
        estimate,
        stopped: false,
    }
}

/// Forecast moments at `t` from the pre-shift forecast ensemble at `t - 1`,
/// with one scrambled Sobol point per member driving the pending shift (first
/// `d_y` coordinates) and the evolution (remaining `m`).
///
/// Returns the moments together with the new forecast ensemble.
pub fn enkf_moments_rqmc(
    model: &dyn SsmModel,
    theta: &ParamVector,
    forecast: &Ensemble,
    pending: Option<&PendingShift>,
    sampler: &mut SobolSampler,
) -> Result<(ForecastMoments, Ensemble)> {
    let m = model.normal_draw_count().ok_or_else(|| Error::Unsupported {
        model: model.name().to_string(),
        feature: "normal-driven evolution",
    })?;
    let dy = model.obs_dim();
    if sampler.dim() != dy + m {
        return Err(Error::DimensionMismatch {
            what: "sobol dimension",
            expected: dy + m,
            got: sampler.dim(),
        });
    }
    let mut u = vec![0.0; dy + m];
    propagate_with(model, theta, forecast, pending, |z| {
        sampler.next_point(&mut u);
        for (zj, &uj) in z.iter_mut().zip(&u) {
            *zj = normal_quantile(uj)?;
        }
        Ok(())
    })
}

/// Pseudo-random counterpart of [`enkf_moments_rqmc`].
pub fn enkf_moments_pseudo(
    model: &dyn SsmModel,
    theta: &ParamVector,
    forecast: &Ensemble,
    pending: Option<&PendingShift>,
    stream: &mut RngStream,
) -> Result<(ForecastMoments, Ensemble)> {
    propagate_with(model, theta, forecast, pending, |z| {
        stream.fill_standard_normals(z);
        Ok(())
    })
}

fn propagate_with(
    model: &dyn SsmModel,
    theta: &ParamVector,
    forecast: &Ensemble,
    pending: Option<&PendingShift>,
    mut draw: impl FnMut(&mut [f64]) -> Result<()>,
) -> Result<(ForecastMoments, Ensemble)> {
    let bound = model.bind(theta)?;
    let m = bound.normal_draw_count().ok_or_else(|| Error::Unsupported {
        model: model.name().to_string(),
        feature: "normal-driven evolution",
    })?;
    let obs = bound.obs();
    let (dy, dx) = (obs.obs_dim(), obs.state_dim());
    if forecast.dim() != dx {
        return Err(Error::DimensionMismatch {
            what: "ensemble member",
            expected: dx,
            got: forecast.dim(),
        });
    }
    let gain = match pending {
        Some(p) => {
            if p.gain.shape() != (dx, dy) || p.y.len() != dy {
                return Err(Error::DimensionMismatch {
                    what: "pending shift gain",
                    expected: dx * dy,
                    got: p.gain.len(),
                });
            }
            Some((row_major(&p.gain), p.y.as_slice().to_vec()))
        }
        None => None,
    };
    let ls = row_major(&linalg::psd_sqrt(&obs.s)?);
    let mut ws = Workspace {
        dx,
        dy,
        p: row_major(&obs.p),
        ls,
        ytilde: vec![0.0; dy],
    };
    let mut x = forecast.values().to_vec();
    let mut z = vec![0.0; dy + m];
    for member in x.chunks_exact_mut(dx) {
        draw(&mut z)?;
        if let Some((g, y)) = &gain {
            ws.shift(bound.as_ref(), member, g, y, &z[..dy]);
        }
        bound.advance_with_normals(member, &z[dy..])?;
    }
    let ens = Ensemble::new(dx, x)?;
    Ok((ens.moments(), ens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{kalman_filter, kalman_loglik};
    use crate::models::{build_model, simulate_dataset, OverrideValue, Overrides};

    fn linear(pairs: &[(&str, f64)]) -> Box<dyn SsmModel> {
        let o: Overrides = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), OverrideValue::Number(*v)))
            .collect();
        build_model("linear-gaussian", &o).unwrap()
    }

    fn data_for(model: &dyn SsmModel, rows: usize, seed: u64) -> Dataset {
        simulate_dataset(model, &model.true_params(), rows, &mut RngStream::new(seed, 9))
            .unwrap()
            .dataset
    }

    fn with_initial(data: &Dataset) -> Dataset {
        let times = (0..data.len()).map(|t| t as f64).collect();
        Dataset::new(times, data.observations().to_vec()).unwrap()
    }

    #[test]
    fn stream_and_block_runs_are_identical() {
        for (model, data) in [
            (linear(&[]), None),
            (linear(&[]), Some(true)),
            (build_model("ricker", &Overrides::new()).unwrap(), None),
        ] {
            let mut d = data_for(model.as_ref(), 8, 1);
            if data == Some(true) {
                d = with_initial(&d);
            }
            let theta = model.true_params();
            for density in [DensityKind::Plugin, DensityKind::Unbiased] {
                let mut s = RngStream::new(7, 3);
                let layout = enkf_block_layout(model.as_ref(), &theta, &d, 20).unwrap();
                let block = NormalBlock::sample(layout, &mut s.clone());
                let a = enkf_loglik(model.as_ref(), &theta, &d, 20, EnkfNoise::Stream(&mut s), density).unwrap();
                let b = enkf_loglik(model.as_ref(), &theta, &d, 20, EnkfNoise::Block(&block), density).unwrap();
                assert_eq!(a.value.to_bits(), b.value.to_bits());
                assert!(a.value.is_finite());
                assert_eq!(s.counter(), 2 * layout.len() as u128);
            }
        }
    }

    #[test]
    fn block_layout_counts_members_and_head() {
        let model = linear(&[("dim", 3.0)]);
        let d = data_for(model.as_ref(), 5, 2);
        let l = enkf_block_layout(model.as_ref(), &model.true_params(), &d, 10).unwrap();
        assert_eq!((l.head, l.steps, l.step_width()), (3, 5, 6));
        assert_eq!(l.len(), 10 * (3 + 5 * 6));
        let l0 = enkf_block_layout(model.as_ref(), &model.true_params(), &with_initial(&d), 10).unwrap();
        assert_eq!((l0.head, l0.steps), (6, 4));
    }

    #[test]
    fn identical_members_use_observation_noise_only() {
        let model = linear(&[("dim", 1.0), ("q", 0.0), ("p0", 0.0), ("a", 0.8), ("s", 2.0)]);
        let theta = model.true_params();
        let d = data_for(model.as_ref(), 6, 3);
        let est = enkf_loglik(
            model.as_ref(),
            &theta,
            &d,
            2,
            EnkfNoise::Stream(&mut RngStream::new(1, 1)),
            DensityKind::Plugin,
        )
        .unwrap();
        let mut x = 1.0;
        let mut oracle = 0.0;
        for y in d.observations() {
            x *= 0.8;
            oracle += crate::model::normal_logpdf(y[0], x, 2f64.sqrt());
        }
        approx::assert_abs_diff_eq!(est.value, oracle, epsilon = 1e-10);
    }

    #[test]
    fn large_ensembles_match_kalman() {
        let model = linear(&[]);
        let theta = model.true_params();
        let d = data_for(model.as_ref(), 10, 4);
        let exact = kalman_loglik(&model.linear_gaussian(&theta).unwrap(), &d).unwrap();
        for seed in 0..5 {
            for density in [DensityKind::Plugin, DensityKind::Unbiased] {
                let est = enkf_loglik(
                    model.as_ref(),
                    &theta,
                    &d,
                    10_000,
                    EnkfNoise::Stream(&mut RngStream::new(seed, 0)),
                    density,
                )
                .unwrap();
                assert!((est.value - exact).abs() < 0.1, "{} vs {exact}", est.value);
            }
        }
    }

    #[test]
    fn shifted_mean_tracks_kalman_filtering_mean() {
        // Identity dynamics, so the ensemble after each shift is the next forecast.
        let model = linear(&[("dim", 1.0), ("a", 1.0), ("q", 0.0), ("p0", 2.0)]);
        let theta = model.true_params();
        let d = data_for(model.as_ref(), 5, 5);
        let steps = kalman_filter(&model.linear_gaussian(&theta).unwrap(), &d).unwrap();
        let bound = model.bind(&theta).unwrap();
        let n = 5000;
        let reps = 20;
        let mut means = [0.0; 5];
        for r in 0..reps {
            let mut s = RngStream::new(100 + r, 0);
            let init = s.standard_normals(n).iter().map(|z| 1.0 + 2f64.sqrt() * z).collect();
            let mut ens = Ensemble::new(1, init).unwrap();
            for (t, y) in d.observations().iter().enumerate() {
                let pending = PendingShift::from_forecast(&ens, bound.obs(), y.clone()).unwrap();
                let (m, next) = enkf_moments_pseudo(model.as_ref(), &theta, &ens, Some(&pending), &mut s).unwrap();
                means[t] += m.mean[0] / reps as f64;
                ens = next;
            }
        }
        for (m, k) in means.iter().zip(&steps) {
            let sd = (k.filtered_cov[(0, 0)] / (n * reps as usize) as f64).sqrt();
            assert!((m - k.filtered_mean[0]).abs() < 5.0 * sd + 1e-3, "{m} vs {}", k.filtered_mean[0]);
        }
    }

    fn forecast_mean_variance(rqmc: bool) -> f64 {
        let model = linear(&[("dim", 1.0), ("a", 0.9), ("q", 1.0)]);
        let theta = model.true_params();
        let bound = model.bind(&theta).unwrap();
        let mut base = RngStream::new(42, 0);
        let ens = Ensemble::new(1, base.standard_normals(256)).unwrap();
        let pending = PendingShift::from_forecast(&ens, bound.obs(), DVector::from_element(1, 0.7)).unwrap();
        let means: Vec<f64> = (0..200u64)
            .map(|seed| {
                let (m, _) = if rqmc {
                    let mut sampler = SobolSampler::scrambled(2, seed).unwrap();
                    enkf_moments_rqmc(model.as_ref(), &theta, &ens, Some(&pending), &mut sampler).unwrap()
                } else {
                    let mut s = RngStream::new(seed, 1);
                    enkf_moments_pseudo(model.as_ref(), &theta, &ens, Some(&pending), &mut s).unwrap()
                };
                m.mean[0]
            })
            .collect();
        let mu = means.iter().sum::<f64>() / 200.0;
        means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / 199.0
    }

    #[test]
    fn sobol_points_reduce_forecast_mean_variance() {
        let qmc = forecast_mean_variance(true);
        let mc = forecast_mean_variance(false);
        assert!(qmc <= mc / 4.0, "qmc {qmc} mc {mc}");
    }

    #[test]
    fn noiseless_moments_ignore_the_points() {
        let model = linear(&[("dim", 1.0), ("q", 0.0)]);
        let theta = model.true_params();
        let ens = Ensemble::new(1, vec![0.1, 0.5, -0.3, 1.2]).unwrap();
        let mut a = SobolSampler::scrambled(2, 1).unwrap();
        let mut b = SobolSampler::scrambled(2, 2).unwrap();
        let (ma, _) = enkf_moments_rqmc(model.as_ref(), &theta, &ens, None, &mut a).unwrap();
        let (mb, _) = enkf_moments_rqmc(model.as_ref(), &theta, &ens, None, &mut b).unwrap();
        assert_eq!(ma, mb);
        let mut wrong = SobolSampler::scrambled(3, 1).unwrap();
        assert!(enkf_moments_rqmc(model.as_ref(), &theta, &ens, None, &mut wrong).is_err());
    }

    #[test]
    fn rqmc_filter_runs_and_is_deterministic() {
        let model = linear(&[]);
        let theta = model.true_params();
        let d = data_for(model.as_ref(), 10, 6);
        let exact = kalman_loglik(&model.linear_gaussian(&theta).unwrap(), &d).unwrap();
        let a = enkf_loglik_rqmc(model.as_ref(), &theta, &d, 512, &mut RngStream::new(3, 0)).unwrap();
        let b = enkf_loglik_rqmc(model.as_ref(), &theta, &d, 512, &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(a, b);
        assert!((a.value - exact).abs() < 1.0);
    }

    #[test]
    fn argument_checks() {
        let model = linear(&[]);
        let theta = model.true_params();
        let d = data_for(model.as_ref(), 4, 7);
        let run = |n, density| {
            enkf_loglik(model.as_ref(), &theta, &d, n, EnkfNoise::Stream(&mut RngStream::new(0, 0)), density)
        };
        assert!(run(1, DensityKind::Plugin).is_err());
        assert!(run(2, DensityKind::Plugin).is_ok());
        assert!(run(5, DensityKind::Unbiased).is_err());
        assert!(run(6, DensityKind::Unbiased).is_ok());
        let lv = build_model("lotka-volterra", &Overrides::new()).unwrap();
        let lvd = data_for(lv.as_ref(), 3, 8);
        let lt = lv.true_params();
        assert!(enkf_block_layout(lv.as_ref(), &lt, &lvd, 10).is_err());
        assert!(enkf_loglik_rqmc(lv.as_ref(), &lt, &lvd, 10, &mut RngStream::new(0, 0)).is_err());
        let e = enkf_loglik(lv.as_ref(), &lt, &lvd, 50, EnkfNoise::Stream(&mut RngStream::new(0, 0)), DensityKind::Plugin)
            .unwrap();
        assert!(e.value.is_finite());
    }

    #[test]
    fn monitor_sees_every_factor_and_can_stop() {
        let model = linear(&[]);
        let theta = model.true_params();
        let d = data_for(model.as_ref(), 6, 9);
        let bound = model.bind(&theta).unwrap();
        let mut seen = Vec::new();
        let out = run_enkf(
            bound.as_ref(),
            "linear-gaussian",
            &d,
            30,
            DensityKind::Plugin,
            Noise::Stream(&mut RngStream::new(1, 0)),
            &mut |k, v| {
                seen.push((k, v));
                k < 3
            },
        )
        .unwrap();
        assert!(out.stopped);
        assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(seen[0].1, 0.0);
        assert_eq!(out.estimate.factors, 3);
        assert_eq!(out.estimate.value, seen[3].1);
    }
}
