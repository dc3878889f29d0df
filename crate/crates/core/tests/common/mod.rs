#![allow(dead_code)]

use emcmc::models::{build_model, simulate_dataset, OverrideValue, Overrides};
use emcmc::{Dataset, RngStream, SsmModel};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn model(name: &str, pairs: &[(&str, f64)]) -> Box<dyn SsmModel> {
    let o: Overrides = pairs
        .iter()
        .map(|(k, v)| (k.to_string(), OverrideValue::Number(*v)))
        .collect();
    build_model(name, &o).unwrap()
}

pub fn simulate(model: &dyn SsmModel, rows: usize, seed: u64) -> Dataset {
    let theta = model.true_params();
    simulate_dataset(model, &theta, rows, &mut RngStream::new(seed, 0))
        .unwrap()
        .dataset
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

pub fn lag1_correlation(xs: &[f64]) -> f64 {
    let (m, _) = mean_sd(xs);
    let num: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    let den: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    num / den
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let c: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    c / (sa * sb)
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov p-value against `N(0, 1)`.
pub fn ks_normal_pvalue(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = emcmc::rng::normal_cdf(*x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)
}

pub fn chi_square_sf(stat: f64, dof: usize) -> f64 {
    1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat)
}
