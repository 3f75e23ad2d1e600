use farescale::diagnose::{centered_gaussian_loglik, profile_loglik, psi2_gradient_fd};
use farescale::estimator::{psi_step_rescale, Estimator};
use farescale::{estimating_residual, fit, DataMatrix, Dist, FaConfig, FaModel, Psi2Init, SimSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dist_strategy() -> impl Strategy<Value = Dist> {
    prop_oneof![
        Just(Dist::Gaussian),
        Just(Dist::UniformScaled),
        (3.0f64..12.0).prop_map(|df| Dist::StudentT { df }),
    ]
}

/// Wide (`p > n`) instances.
fn wide() -> impl Strategy<Value = (SimSpec, usize)> {
    (40usize..160, 10usize..24, 1usize..4, any::<u64>(), dist_strategy()).prop_map(|(p, n, k, seed, d)| {
        (SimSpec::synthetic(p, k, n, seed).with_dists(d.clone(), d), k)
    })
}

/// Tall (`p < n`) instances.
fn tall() -> impl Strategy<Value = (SimSpec, usize)> {
    (6usize..14, 150usize..400, 1usize..3, any::<u64>()).prop_map(|(p, n, k, seed)| (SimSpec::synthetic(p, k, n, seed), k))
}

fn relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn implied_covariance(m: &FaModel) -> DMatrix<f64> {
    &m.lambda * m.lambda.transpose() + DMatrix::from_diagonal(&m.psi2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn positivity_on_every_iterate((spec, k) in wide(), rescale in any::<bool>()) {
        let x = spec.simulate().unwrap();
        let rule = if rescale { "rescale" } else { "subtract" };
        let m = fit(&x, &FaConfig::new(k).with_rule(rule).with_max_iter(200)).unwrap();
        for r in m.trace.records() {
            prop_assert!(r.min_psi2 > 0.0, "iter {} min psi2 {}", r.iter, r.min_psi2);
        }
    }

    #[test]
    fn retained_eigenvalues_exceed_one_when_wide((spec, k) in wide()) {
        let x = spec.simulate().unwrap();
        let m = fit(&x, &FaConfig::new(k).with_max_iter(200)).unwrap();
        for r in m.trace.records() {
            prop_assert!(r.omega_min > 1.0, "iter {} omega_min {}", r.iter, r.omega_min);
        }
        prop_assert!(m.omega.iter().all(|&w| w > 1.0));
    }

    #[test]
    fn converged_fits_solve_the_equations((spec, k) in wide()) {
        let x = spec.simulate().unwrap();
        let cfg = FaConfig::new(k);
        let m = fit(&x, &cfg).unwrap();
        prop_assume!(m.converged);
        let p = x.p();
        let last = m.trace.last().unwrap();
        prop_assert!((last.tail_sum - (p - k) as f64).abs() <= cfg.tol_trace * p as f64);
        let r = estimating_residual(&x, &m.lambda, &m.psi2).unwrap();
        prop_assert!(r.lambda_residual <= 10.0 * cfg.tol_psi, "{:?}", r);
        prop_assert!(r.psi_residual <= 10.0 * cfg.tol_psi, "{:?}", r);
    }

    #[test]
    fn subtract_fixed_points_are_rescale_fixed_points((spec, k) in wide()) {
        let x = spec.simulate().unwrap();
        let m = fit(&x, &FaConfig::new(k).with_tol_psi(1e-12)).unwrap();
        prop_assume!(m.converged);
        let svd = Estimator::default().decompose(&x, &m.psi2, k).unwrap();
        let next = psi_step_rescale(&x.sxx_diag(), &svd, x.n()).unwrap();
        let change = next.iter().zip(m.psi2.iter()).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
        prop_assert!(change <= 1e-9, "rescale moved a subtract fixed point by {change}");
    }

    #[test]
    fn fit_is_scale_invariant(
        (spec, k) in wide(),
        logd in prop::collection::vec(-(10f64.ln())..10f64.ln(), 160),
    ) {
        let x = spec.simulate().unwrap();
        let d: Vec<f64> = logd[..x.p()].iter().map(|v| v.exp()).collect();
        let cfg = FaConfig::new(k);
        let base = fit(&x, &cfg).unwrap();
        prop_assume!(base.converged);
        let scaled = fit(&x.scale_columns(&d).unwrap(), &cfg).unwrap();
        prop_assert!(scaled.converged);
        let dm = DVector::from_vec(d.clone());
        let expected_lambda = DMatrix::from_diagonal(&dm) * &base.lambda;
        let expected_psi2 = base.psi2.component_mul(&dm.component_mul(&dm));
        prop_assert!(relative(&scaled.lambda, &expected_lambda) <= 1e-6);
        let psi_rel = (&scaled.psi2 - &expected_psi2).norm() / expected_psi2.norm();
        prop_assert!(psi_rel <= 1e-6);
    }

    #[test]
    fn likelihood_improves_and_is_stationary((spec, k) in tall()) {
        let x = spec.simulate().unwrap();
        let cfg = FaConfig::new(k);
        let m = fit(&x, &cfg).unwrap();
        prop_assume!(m.converged);
        let init = profile_loglik(&x, &(x.sxx_diag() * 0.5), k).unwrap();
        let at_fit = centered_gaussian_loglik(&x, &m.lambda, &m.psi2).unwrap();
        prop_assert!(at_fit >= init, "{at_fit} < {init}");
        let grad = psi2_gradient_fd(&x, &m.lambda, &m.psi2, 1e-5).unwrap();
        prop_assert!(grad.amax() <= 1e-4, "gradient {}", grad.amax());
    }

    #[test]
    fn explicit_init_matches_fractional(p in 30usize..80, seed in any::<u64>()) {
        let x = SimSpec::synthetic(p, 2, 15, seed).simulate().unwrap();
        let half = fit(&x, &FaConfig::new(2)).unwrap();
        let values = (x.sxx_diag() * 0.5).as_slice().to_vec();
        let explicit = fit(&x, &FaConfig::new(2).with_psi2_init(Psi2Init::Values(values))).unwrap();
        prop_assert_eq!(half.lambda, explicit.lambda);
        prop_assert_eq!(half.psi2, explicit.psi2);
    }
}

/// Gaussian-ML stationarity at a Gaussian fit with n ≫ p, p = 10 and n = 5000
/// (per-coordinate gradient ≤ 1e-4).
#[test]
fn ml_stationarity_large_n() {
    let x = SimSpec::synthetic(10, 2, 5000, 77).simulate().unwrap();
    let m = fit(&x, &FaConfig::new(2)).unwrap();
    assert!(m.converged);
    let grad = psi2_gradient_fd(&x, &m.lambda, &m.psi2, 1e-5).unwrap();
    assert!(grad.amax() <= 1e-4, "{grad}");
}

#[test]
fn covariance_recovery_improves_with_n() {
    for d in [Dist::Gaussian, Dist::UniformScaled, Dist::StudentT { df: 5.0 }] {
        let errors: Vec<f64> = [200usize, 2000, 20000]
            .iter()
            .map(|&n| {
                let spec = SimSpec::synthetic(10, 2, n, 5).with_dists(d.clone(), d.clone());
                let x: DataMatrix = spec.simulate().unwrap();
                let m = fit(&x, &FaConfig::new(2)).unwrap();
                assert!(m.converged);
                relative(&implied_covariance(&m), &spec.population_covariance())
            })
            .collect();
        assert!(errors.windows(2).all(|w| w[1] < w[0]), "{d:?}: {errors:?}");
    }
}

#[test]
fn loglik_trajectory_is_reported() {
    // ascent along iterations is not guaranteed; only the endpoints are compared
    let x = SimSpec::synthetic(8, 2, 300, 12).simulate().unwrap();
    let mut lls = Vec::new();
    for iters in 1..=8 {
        let m = fit(&x, &FaConfig::new(2).with_max_iter(iters)).unwrap();
        lls.push(centered_gaussian_loglik(&x, &m.lambda, &m.psi2).unwrap());
    }
    let drops = lls.windows(2).filter(|w| w[1] < w[0] - 1e-8).count();
    eprintln!("loglik over iterations: {lls:?} ({drops} decreases)");
    let init = profile_loglik(&x, &(x.sxx_diag() * 0.5), 2).unwrap();
    assert!(*lls.last().unwrap() >= init);
}
