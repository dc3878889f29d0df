mod common;

use common::{correlation, ks_normal_pvalue, model, simulate};
use emcmc::diagnostics::multivariate_ess;
use emcmc::filters::{enkf_loglik, unbiased_gaussian_logpdf, DensityKind, EnkfNoise, Estimator};
use emcmc::mcmc::ProposalSpec;
use emcmc::model::{exponential_logpdf, normal_logpdf};
use emcmc::models::{ecology_evolve, gillespie_evolve, lotka_volterra_network, EcologyVariant, Growth};
use emcmc::rng::{crank_nicolson, BlockLayout, NormalBlock};
use emcmc::RngStream;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn flat_layout(len: usize) -> BlockLayout {
    BlockLayout {
        members: len,
        head: 1,
        steps: 0,
        obs_dim: 1,
        evolution: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn crank_nicolson_keeps_standard_normal_law(sigma_u in 0.01f64..=1.0, seed in any::<u64>()) {
        let mut s = RngStream::new(seed, 0);
        let u = NormalBlock::sample(flat_layout(100_000), &mut s);
        let v = crank_nicolson(&u, sigma_u, &mut s).unwrap();
        prop_assert!(ks_normal_pvalue(v.values()) > 1e-3);
        let c = correlation(u.values(), v.values());
        prop_assert!((c - (1.0 - sigma_u * sigma_u).sqrt()).abs() < 0.01, "corr {}", c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mess_is_affine_invariant(
        seed in any::<u64>(),
        a in prop::collection::vec(-0.5f64..0.5, 9),
        b in prop::collection::vec(-100.0f64..100.0, 3),
    ) {
        let mut s = RngStream::new(seed, 0);
        let mut prev = [0.0; 3];
        let chain = DMatrix::from_fn(400, 3, |_, j| {
            prev[j] = 0.7 * prev[j] + s.standard_normal();
            prev[j]
        });
        let mut mat = DMatrix::from_row_slice(3, 3, &a);
        mat += DMatrix::identity(3, 3) * 2.0;
        let shifted = &chain * mat.transpose();
        let moved = DMatrix::from_fn(400, 3, |i, j| shifted[(i, j)] + b[j]);
        let r0 = multivariate_ess(&chain).unwrap().mess;
        let r1 = multivariate_ess(&moved).unwrap().mess;
        prop_assert!(((r1 - r0) / r0).abs() < 1e-6, "{} vs {}", r0, r1);
    }

    #[test]
    fn random_walk_increment_ignores_position(
        seed in any::<u64>(),
        t1 in prop::collection::vec(-10.0f64..10.0, 3),
        t2 in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let p = ProposalSpec::diagonal(&[0.3, 1.0, 2.0], 1.5).unwrap();
        let s = RngStream::new(seed, 0);
        let a = p.propose(&t1, &mut s.clone());
        let b = p.propose(&t2, &mut s.clone());
        for j in 0..3 {
            prop_assert!(((a[j] - t1[j]) - (b[j] - t2[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn log_acceptance_ratio_is_antisymmetric(mu1 in -5.0f64..5.0, mu2 in -5.0f64..5.0) {
        let m = model("linear-gaussian", &[]);
        let data = simulate(m.as_ref(), 8, 3);
        let target = |mu: f64| {
            let theta = m.params(vec![mu]).unwrap();
            let ll = Estimator::Kalman.estimate(m.as_ref(), &theta, &data, &mut RngStream::new(0, 0)).unwrap().value;
            ll + m.prior_logpdf(&theta).unwrap()
        };
        let (a, b) = (target(mu1), target(mu2));
        prop_assert_eq!(b - a, -(a - b));
    }

    #[test]
    fn unbiased_density_is_affine_equivariant(
        seed in any::<u64>(),
        shift in prop::collection::vec(-3.0f64..3.0, 2),
        scale in 0.2f64..5.0,
    ) {
        let (n, d) = (10, 2);
        let mut s = RngStream::new(seed, 0);
        let x = DMatrix::from_fn(n, d, |_, _| s.standard_normal());
        let moments = |x: &DMatrix<f64>| {
            let mean: DVector<f64> = x.row_mean().transpose();
            let mut c = x.clone();
            for mut row in c.row_iter_mut() {
                row -= mean.transpose();
            }
            (mean, c.transpose() * &c / (n - 1) as f64)
        };
        let y = DVector::from_vec(vec![0.3, -0.2]);
        let (m0, c0) = moments(&x);
        let base = unbiased_gaussian_logpdf(&y, &m0, &c0, n).unwrap();
        let b = DVector::from_vec(shift);
        let xt = DMatrix::from_fn(n, d, |i, j| scale * x[(i, j)] + b[j]);
        let (m1, c1) = moments(&xt);
        let moved = unbiased_gaussian_logpdf(&(&y * scale + &b), &m1, &c1, n).unwrap();
        if base.is_finite() {
            prop_assert!((moved + d as f64 * scale.ln() - base).abs() < 1e-9, "{} vs {}", moved, base);
        } else {
            prop_assert_eq!(moved, f64::NEG_INFINITY);
        }
    }

    #[test]
    fn gillespie_counts_stay_nonnegative(
        seed in any::<u64>(),
        c in prop::collection::vec(0.001f64..1.0, 3),
        x0 in prop::collection::vec(0u32..100, 2),
    ) {
        let net = lotka_volterra_network([c[0], c[1] * 0.01, c[2]]);
        let mut x: Vec<f64> = x0.iter().map(|v| *v as f64).collect();
        let mut s = RngStream::new(seed, 0);
        for _ in 0..10 {
            gillespie_evolve(&net, &mut x, 0.5, &mut s).unwrap();
            prop_assert!(x.iter().all(|v| *v >= 0.0 && v.fract() == 0.0), "{:?}", x);
        }
    }

    #[test]
    fn mjp_constraint_reflects_to_nonnegative(x in prop::collection::vec(-1e3f64..1e3, 5)) {
        for (name, dim) in [("lotka-volterra", 2usize), ("autoreg", 5)] {
            let m = model(name, &[]);
            let bound = m.bind(&m.true_params()).unwrap();
            let mut v = x[..dim].to_vec();
            bound.constrain(&mut v);
            for (a, b) in v.iter().zip(&x) {
                prop_assert!(*a >= 0.0);
                prop_assert_eq!(*a, b.abs());
            }
        }
    }

    #[test]
    fn ecology_population_stays_positive(
        log_n in -2000.0f64..2000.0,
        eps in -50.0f64..50.0,
        b in prop::collection::vec(-10.0f64..10.0, 6),
    ) {
        let g = Growth { b0: b[0], b1: b[1], b2: b[2], b3: b[3], b4: b[4].abs() + 1e-3, b5: b[5] };
        for v in [EcologyVariant::Ricker, EcologyVariant::ThetaLogistic, EcologyVariant::MateLimited, EcologyVariant::FlexibleAllee] {
            let next = ecology_evolve(v, &g, log_n, eps);
            prop_assert!(next.is_finite());
            prop_assert!(next.exp() > 0.0);
        }
    }

    #[test]
    fn ricker_prior_is_sum_of_marginals(
        b0 in -3.0f64..3.0,
        b1 in -3.0f64..3.0,
        sw in -1.0f64..3.0,
        se in -1.0f64..3.0,
        n0 in -10.0f64..10.0,
    ) {
        let m = model("ricker", &[]);
        let theta = m.params(vec![b0, b1, sw, se, n0]).unwrap();
        let joint = m.prior_logpdf(&theta).unwrap();
        let sum = normal_logpdf(b0, 0.0, 1.0) + normal_logpdf(b1, 0.0, 1.0)
            + exponential_logpdf(sw, 1.0) + exponential_logpdf(se, 1.0);
        if sum.is_finite() {
            prop_assert!((joint - sum).abs() < 1e-12);
        } else {
            prop_assert_eq!(joint, f64::NEG_INFINITY);
        }
    }

    #[test]
    fn filters_are_pure_functions_of_their_seed(seed in any::<u64>()) {
        let m = model("ricker", &[]);
        let data = simulate(m.as_ref(), 30, 1);
        let theta = m.true_params();
        for est in [
            Estimator::Bpf { n: 50 },
            Estimator::Enkf { n: 50, density: DensityKind::Plugin },
            Estimator::Enkf { n: 50, density: DensityKind::Unbiased },
            Estimator::EnkfRqmc { n: 32 },
        ] {
            let a = est.estimate(m.as_ref(), &theta, &data, &mut RngStream::new(seed, 1)).unwrap();
            let b = est.estimate(m.as_ref(), &theta, &data, &mut RngStream::new(seed, 1)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn diverging_lorenz_gives_zero_ensemble_likelihood(log_theta1 in 12.0f64..20.0, seed in any::<u64>()) {
        let m = model("lorenz63", &[]);
        let data = simulate(m.as_ref(), 5, 2);
        let mut v = m.true_params().values().to_vec();
        v[0] = log_theta1;
        let theta = m.params(v).unwrap();
        let e = enkf_loglik(m.as_ref(), &theta, &data, 20, EnkfNoise::Stream(&mut RngStream::new(seed, 0)), DensityKind::Plugin)
            .unwrap();
        prop_assert_eq!(e.value, f64::NEG_INFINITY);
    }
}

#[test]
fn ensemble_filter_on_jump_process_stays_finite() {
    let m = model("lotka-volterra", &[]);
    let data = simulate(m.as_ref(), 20, 4);
    let theta = m.true_params();
    for seed in 0..5 {
        let e = Estimator::Enkf {
            n: 100,
            density: DensityKind::Plugin,
        }
        .estimate(m.as_ref(), &theta, &data, &mut RngStream::new(seed, 0))
        .unwrap();
        assert!(e.value.is_finite());
    }
}
