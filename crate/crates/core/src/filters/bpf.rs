//! Bootstrap particle filter with multinomial resampling.

use super::{EstimatorKind, LogLikelihoodEstimate};
use crate::error::{Error, Result};
use crate::model::{Dataset, ParamVector, SsmModel};
use crate::rng::RngStream;

/// Particle filter log-likelihood estimate, `sum_t log(S_t / N)`.
///
/// Unbiased for the likelihood on the natural scale. Returns `-inf` as soon
/// as every particle has zero weight.
pub fn bpf_loglik(
    model: &dyn SsmModel,
    theta: &ParamVector,
    data: &Dataset,
    n: usize,
    stream: &mut RngStream,
) -> Result<LogLikelihoodEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("particle filter needs at least one particle".into()));
    }
    model.check_dim(theta)?;
    let bound = model.bind(theta)?;
    data.check_against(bound.as_ref())?;
    let density = bound.obs().density()?;
    let d = bound.state_dim();
    let log_n = (n as f64).ln();

    let mut estimate = LogLikelihoodEstimate {
        value: 0.0,
        estimator: EstimatorKind::Bpf,
        n,
        factors: 0,
        evolutions: 0,
    };
    let mut x = vec![0.0; n * d];
    for member in x.chunks_exact_mut(d) {
        bound.init(member, stream);
    }
    let mut scratch = vec![0.0; n * d];
    let mut logw = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut weighted = false;

    for (k, y) in data.observations().iter().enumerate() {
        let initial = k == 0 && data.has_initial();
        if !initial {
            if weighted {
                resample(&x, &mut scratch, d, &weights, stream);
                std::mem::swap(&mut x, &mut scratch);
            }
            for member in x.chunks_exact_mut(d) {
                match bound.advance(member, stream) {
                    Ok(()) => {}
                    Err(e) if e.is_divergence() => return Ok(zero(estimate)),
                    Err(e) => return Err(e),
                }
            }
            estimate.evolutions += n as u64;
        }
        let y = y.as_slice();
        let mut max = f64::NEG_INFINITY;
        for (lw, member) in logw.iter_mut().zip(x.chunks_exact(d)) {
            let v = density.log_pdf_slice(y, member);
            *lw = if v.is_nan() { f64::NEG_INFINITY } else { v };
            max = max.max(*lw);
        }
        if max == f64::NEG_INFINITY {
            return Ok(zero(estimate));
        }
        let mut total = 0.0;
        for (w, lw) in weights.iter_mut().zip(&logw) {
            *w = (lw - max).exp();
            total += *w;
        }
        estimate.value += max + total.ln() - log_n;
        estimate.factors += 1;
        weights.iter_mut().for_each(|w| *w /= total);
        weighted = true;
    }
    Ok(estimate)
}

fn zero(mut e: LogLikelihoodEstimate) -> LogLikelihoodEstimate {
    e.value = f64::NEG_INFINITY;
    e
}

/// Multinomial resampling: `n` ordered uniforms from normalized exponential
/// spacings, merged against the cumulative weights.
fn resample(from: &[f64], to: &mut [f64], d: usize, weights: &[f64], stream: &mut RngStream) {
    let n = weights.len();
    let mut spacings = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    for _ in 0..=n {
        acc += stream.exponential(1.0);
        spacings.push(acc);
    }
    let scale = 1.0 / acc;
    let mut j = 0;
    let mut cum = weights[0];
    for (i, s) in spacings[..n].iter().enumerate() {
        let u = s * scale;
        while u > cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        to[i * d..(i + 1) * d].copy_from_slice(&from[j * d..(j + 1) * d]);
    }
}


#[cfg(test)]
mod model_tests {
    use super::*;
    use crate::filters::kalman_loglik;
    use crate::models::{build_model, simulate_dataset, OverrideValue, Overrides};

    fn linear(pairs: &[(&str, f64)]) -> Box<dyn SsmModel> {
        let o: Overrides = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), OverrideValue::Number(*v)))
            .collect();
        build_model("linear-gaussian", &o).unwrap()
    }

    #[test]
    fn single_particle_deterministic_model() {
        let model = linear(&[("dim", 1.0), ("q", 0.0), ("p0", 0.0), ("a", 0.5)]);
        let theta = model.true_params();
        let d = Dataset::new(vec![1.0], vec![nalgebra::DVector::from_element(1, 0.3)]).unwrap();
        let est = bpf_loglik(model.as_ref(), &theta, &d, 1, &mut RngStream::new(0, 0)).unwrap();
        let exact = crate::model::observe_logpdf(model.as_ref(), &theta, &d.observations()[0], &[0.5]).unwrap();
        assert_eq!(est.value, exact);
    }

    #[test]
    fn flat_weights_under_huge_noise() {
        let model = linear(&[("dim", 1.0), ("s", 1e6)]);
        let theta = model.true_params();
        let d = simulate_dataset(model.as_ref(), &theta, 5, &mut RngStream::new(1, 0)).unwrap().dataset;
        let v: Vec<f64> = (0..100)
            .map(|r| bpf_loglik(model.as_ref(), &theta, &d, 100, &mut RngStream::new(r, 5)).unwrap().value)
            .collect();
        let m = v.iter().sum::<f64>() / 100.0;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 99.0;
        assert!(var < 1e-4);
        let exact = kalman_loglik(&model.linear_gaussian(&theta).unwrap(), &d).unwrap();
        assert!((m - exact).abs() < 1e-3);
    }

    #[test]
    fn unbiased_on_natural_scale() {
        let model = linear(&[("dim", 1.0), ("a", 1.0), ("q", 0.5)]);
        let theta = model.true_params();
        let d = simulate_dataset(model.as_ref(), &theta, 5, &mut RngStream::new(2, 0)).unwrap().dataset;
        let exact = kalman_loglik(&model.linear_gaussian(&theta).unwrap(), &d).unwrap();
        let reps = 10_000;
        let ratios: Vec<f64> = (0..reps)
            .map(|r| {
                let e = bpf_loglik(model.as_ref(), &theta, &d, 20, &mut RngStream::new(r, 1)).unwrap();
                (e.value - exact).exp()
            })
            .collect();
        let m = ratios.iter().sum::<f64>() / reps as f64;
        let sd = (ratios.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!((m - 1.0).abs() < 3.0 * sd / (reps as f64).sqrt(), "mean ratio {m} sd {sd}");
    }

    #[test]
    fn initial_observation_is_weighted_before_evolving() {
        let model = linear(&[("dim", 1.0), ("q", 0.0), ("p0", 0.0), ("a", 0.5)]);
        let theta = model.true_params();
        let y = |v| nalgebra::DVector::from_element(1, v);
        let d = Dataset::new(vec![0.0, 1.0], vec![y(0.9), y(0.4)]).unwrap();
        let est = bpf_loglik(model.as_ref(), &theta, &d, 3, &mut RngStream::new(0, 0)).unwrap();
        let lp = |v: f64, x: f64| crate::model::normal_logpdf(v, x, 1.0);
        approx::assert_abs_diff_eq!(est.value, lp(0.9, 1.0) + lp(0.4, 0.5), epsilon = 1e-12);
        assert_eq!((est.factors, est.evolutions), (2, 3));
    }

    #[test]
    fn diverging_state_gives_zero() {
        let model = build_model("lorenz63", &Overrides::new()).unwrap();
        let theta = model.params(vec![1e6f64.ln(), 3.3, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let y = nalgebra::DVector::from_element(3, 1.0);
        let d = Dataset::new(vec![0.2, 0.4], vec![y.clone(), y]).unwrap();
        let est = bpf_loglik(model.as_ref(), &theta, &d, 10, &mut RngStream::new(0, 0)).unwrap();
        assert!(est.is_zero());
        assert!(bpf_loglik(model.as_ref(), &theta, &d, 0, &mut RngStream::new(0, 0)).is_err());
    }
}
