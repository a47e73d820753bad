mod common;

use approx::assert_relative_eq;
use common::{big, certify_formulas, rel_err};
use omp_recover::theory::*;
use proptest::prelude::*;

#[test]
fn formulas_match_high_precision_closed_forms() {
    for (name, err) in certify_formulas(200, 0x7e57) {
        assert!(err <= 1e-12, "{name}: relative error {err:e}");
    }
}

#[test]
fn f_delta_and_its_combined_minimum() {
    assert_relative_eq!(f_delta(3.0).unwrap(), 4.0, max_relative = 1e-15);
    assert_relative_eq!(f_delta(8.0).unwrap(), 2.25, max_relative = 1e-15);
    assert!(f_delta(0.0).is_err());
    assert!(f_delta(-1.0).is_err());
    let (mut best_delta, mut best) = (0.0, f64::INFINITY);
    for i in 100..=20_000 {
        let d = i as f64 * 1e-3;
        let v = (1.0 + d) * f_delta(d).unwrap();
        if v < best {
            best = v;
            best_delta = d;
        }
    }
    assert!((best_delta - DELTA_STAR).abs() < 1e-9, "argmin at {best_delta}");
    assert_relative_eq!(best, 16.0, max_relative = 1e-12);
}

#[test]
fn unit_band_gives_r2_of_two() {
    let (r1, r2) = r1_r2_subgaussian(1.0, 1.0, 1.0);
    assert_eq!((r1, r2), (1.0, 2.0));
    let (r1, r2) = r1_r2_subgaussian(0.25, 1.0, 1.0);
    assert_eq!((r1, r2), (64.0, 10.0));
}

#[test]
fn iid_population_constants() {
    let pop = derive_population_constants(0.0, 0.7, 3.0, 4.0);
    assert_eq!(
        (pop.s_min, pop.s_max, pop.omega, pop.nu1_tilde, pop.nu1),
        (1.0, 1.0, 0.0, 0.0, 0.7)
    );
    let pop = derive_population_constants(0.5, 1.0, 4.0, 4.0);
    assert_eq!(
        (pop.s_min, pop.s_max, pop.omega, pop.nu1_tilde, pop.nu1),
        (0.75, 1.25, 0.5, 0.5, 1.5)
    );
}

#[test]
fn gaussian_lambdas_tend_to_one_as_h_shrinks() {
    let pop = derive_population_constants(0.0, 0.0, 0.0, 1.0);
    let mut previous = f64::INFINITY;
    for kbar in [1e2, 1e4, 1e6, 1e8] {
        for h in [1e-2, 1e-4, 1e-6] {
            let lam = lambdas_from_h(&pop, h, kbar).unwrap();
            let spread = (lam.lambda_min - 1.0)
                .abs()
                .max((lam.lambda_max - 1.0).abs())
                .max((lam.lambda - 1.0).abs());
            if h == 1e-6 {
                assert!(spread < previous);
                previous = spread;
            }
        }
    }
    assert!(previous < 1e-3);
    let lam = lambdas_from_h(&derive_population_constants(0.0, 1.0, 1.0, 4.0), 0.5, 4.0).unwrap();
    assert_eq!(lam.lambda_min, 0.25);
    assert!(lambdas_from_h(&pop, 1.0, 4.0).is_none());
}

#[test]
fn gaussian_lambdas_reject_small_n() {
    let pop = derive_population_constants(0.3, 1.0, 4.0, 4.0);
    assert!(matches!(
        gaussian_lambdas(&pop, 128.0, 10.0, 4.0),
        Err(omp_recover::Error::HNotLessThanOne { .. })
    ));
}

#[test]
fn gaussian_r2_reduces_to_subgaussian_form() {
    let pop = derive_population_constants(0.0, 0.0, 0.0, 4.0);
    let lam = lambdas_from_h(&pop, 0.0, f64::INFINITY).unwrap();
    let r1 = r1(lam.lambda_min, lam.lambda_max, lam.lambda);
    assert_eq!(r2_gaussian(&pop, lam.lambda_min, r1), 2.0);

    let pop = PopulationConstants {
        s_min: 1.0,
        s_max: 1.0,
        omega: 0.5,
        nu1_tilde: 0.1,
        nu1: 0.0,
        eta_bar: 0.0,
    };
    assert_relative_eq!(r2_gaussian(&pop, 1.0, 1.0), 1.55, max_relative = 1e-15);
}

#[test]
fn rho_spot_values() {
    assert_eq!(rho(0.0, 0.0, 7.0), 1.0);
    assert_eq!(rho(1.0, 0.0, 4.0), 2.5);
    assert_eq!(tau1(tau(100.0, 1.0), 1.0), tau(100.0, 1.0));
    assert_relative_eq!(tau(std::f64::consts::E, 1.0), 2.0, max_relative = 1e-15);
}

#[test]
fn xi_at_default_alpha_is_sixteen_r2_squared() {
    for &(lmin, lmax, lambda, sigma, kbar) in &[
        (0.25, 2.25, 2.25, 0.5, 4.0),
        (1.0, 1.0, 1.0, 1.0, 1.0),
        (0.6, 1.7, 3.0, 2.0, 10.0),
    ] {
        let (r1, r2) = r1_r2_subgaussian(lmin, lmax, lambda);
        let alpha = default_alpha(sigma, DELTA_STAR, kbar);
        let x = xi(r1, r2, sigma, kbar, alpha, DELTA_STAR).unwrap();
        // at this alpha the noise branch 16 r2^2 dominates 4 r1 since r2^2 > r1
        assert!(rel_err(x, 16.0 * r2 * r2) < 1e-12);
    }
}

#[test]
fn corollary_spot_values() {
    let (xi_bar, r) = corollary_constants(2.0, 1.0, 1.0);
    assert_eq!(xi_bar, 256.0);
    assert_relative_eq!(r, 4.0 * 2f64.sqrt(), max_relative = 1e-15);
}

#[test]
fn failure_bound_spot_values() {
    let b0 = failure_bound(
        0,
        256.0,
        1.0,
        tau(256.0, 1.0),
        FailureRegime::SubGaussian { p_econd: 0.3 },
    );
    assert_eq!(b0.raw, 2.0 / 256.0);
    let t = tau(100.0, 1.0);
    let g0 = failure_bound(0, 100.0, 1.0, t, FailureRegime::Gaussian);
    let want = 1.0 / 100.0 + (2.0 / std::f64::consts::PI).sqrt() / (t * 100.0);
    assert_relative_eq!(g0.raw, want, max_relative = 1e-15);
    let huge = failure_bound(50, 2.0, 0.1, 1.0, FailureRegime::SubGaussian { p_econd: 0.5 });
    assert!(huge.raw > 1.0);
    assert_eq!(huge.clamped, 1.0);
}

#[test]
fn oracle_bound_spot_values() {
    assert_eq!(oracle_bound(&[0.0; 5], 1.0, 0.3, 7.0), 0.0);
    let mu = 0.2;
    let sigma = 0.5;
    let beta = [1.0, -2.0, 0.0, 3.0];
    assert_relative_eq!(
        oracle_bound(&beta, sigma, mu, 2.0),
        2.0 * 3.0 * 0.01,
        max_relative = 1e-14
    );
    let r = 4.0 * 2f64.sqrt();
    assert_relative_eq!(oracle_constant(r), 4.0 / 9.0 * 32.0, max_relative = 1e-15);
}

#[test]
fn mu_n_high_precision_value() {
    assert_relative_eq!(mu_n(256.0, 1024.0), big::mu_n(256.0, 1024.0), max_relative = 1e-15);
    assert_relative_eq!(tau(512.0, 0.5), big::tau(512.0, 0.5), max_relative = 1e-15);
}

fn subgaussian_params(p: usize, kbar: usize, sigma: f64) -> RegimeParams {
    RegimeParams::SubGaussian(SubGaussianRegimeParams {
        p,
        kbar,
        a: 1.0,
        sigma,
        alpha: None,
        delta: DELTA_STAR,
        lambda_min: 0.25,
        lambda_max: 2.25,
        lambda: 2.25,
        p_econd: 0.0,
    })
}

#[test]
fn subgaussian_regime_constants_are_consistent() {
    let params = subgaussian_params(64, 4, 0.5);
    let n = params.corollary_n().unwrap();
    let c = params.constants(n, 4).unwrap();
    assert_eq!(c.rho, 1.0);
    assert_eq!(c.tau1, c.tau);
    assert_eq!(c.r1, 144.0);
    assert_eq!(c.n_corollary, n);
    assert_relative_eq!(c.xi, 16.0 * c.r2 * c.r2, max_relative = 1e-12);
    let (xi_bar, r) = corollary_constants(c.r2, 1.0, 1.0);
    assert_eq!((c.xi_bar, c.r_recovery), (xi_bar, r));
    assert_eq!(c.oracle.c_constant, oracle_constant(r));
}

#[test]
fn gaussian_regime_at_zero_correlation_has_unit_rho() {
    let params = RegimeParams::Gaussian(GaussianRegimeParams {
        p: 128,
        kbar: 4,
        a: 1.0,
        sigma: 0.5,
        omega0: 0.0,
        nu: 0.0,
        eta: 0.0,
        alpha: None,
        delta: DELTA_STAR,
    });
    let n = params.theorem_n().unwrap();
    let c = params.constants(n, 4).unwrap();
    assert_eq!(c.rho, 1.0);
    assert_eq!(c.tau1, c.tau);
    assert!(c.n_sufficient <= n);
}

proptest! {
    #[test]
    fn xi_is_non_increasing_in_alpha_and_meets_at_crossover(
        lmin in 0.05f64..2.0,
        extra in 0.0f64..3.0,
        lambda in 0.1f64..5.0,
        sigma in 0.05f64..3.0,
        kbar in 1u32..50,
        delta in 0.05f64..20.0,
        a1 in 1e-4f64..10.0,
        a2 in 1e-4f64..10.0,
    ) {
        let (r1, r2) = r1_r2_subgaussian(lmin, lmin + extra, lambda);
        let kbar = kbar as f64;
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        prop_assert!(xi(r1, r2, sigma, kbar, lo, delta).unwrap() >= xi(r1, r2, sigma, kbar, hi, delta).unwrap());
        let cross = xi_crossover_alpha(r1, r2, sigma, kbar, delta).unwrap();
        let eigen = (1.0 + delta) * r1;
        let noise = sigma * sigma * r2 * r2 * f_delta(delta).unwrap() / (kbar * cross);
        prop_assert!(rel_err(noise, eigen) < 1e-12);
        prop_assert!(rel_err(xi(r1, r2, sigma, kbar, cross, delta).unwrap(), eigen) < 1e-12);
        prop_assert_eq!(xi(r1, r2, sigma, kbar, cross * 2.0, delta).unwrap(), eigen);
    }

    #[test]
    fn r2_dominates_sqrt_r1(
        lmin in 0.01f64..3.0,
        lmax in 0.01f64..5.0,
        lambda in 0.01f64..5.0,
        omega0 in 0.0f64..0.99,
        nu in 0.0f64..3.0,
        eta in 0.0f64..10.0,
        kbar in 1u32..64,
        h in 0.0f64..0.95,
    ) {
        let (r1, r2) = r1_r2_subgaussian(lmin, lmax, lambda);
        prop_assert!(r2 >= r1.sqrt());
        let pop = derive_population_constants(omega0, nu, eta, kbar as f64);
        let lam = lambdas_from_h(&pop, h, kbar as f64).unwrap();
        let r1g = omp_recover::theory::r1(lam.lambda_min, lam.lambda_max, lam.lambda);
        prop_assert!(r2_gaussian(&pop, lam.lambda_min, r1g) >= r1g.sqrt());
        prop_assert!(r2_star(omega0, lam.lambda_min, r1g) >= r1g.sqrt());
    }

    #[test]
    fn rho_is_at_least_one_with_equality_only_at_zero(
        nu1 in 0.0f64..5.0,
        omega in 0.0f64..0.99,
        kbar in 1u32..100,
        zero_nu in any::<bool>(),
        zero_omega in any::<bool>(),
    ) {
        let nu1 = if zero_nu { 0.0 } else { nu1 };
        let omega = if zero_omega { 0.0 } else { omega };
        let r = rho(nu1, omega, kbar as f64);
        prop_assert!(r >= 1.0);
        prop_assert_eq!(r == 1.0, nu1 == 0.0 && omega == 0.0);
    }

    #[test]
    fn failure_bound_is_monotone_in_k(
        kbar in 0usize..100,
        p in 2.0f64..1e5,
        a in 0.01f64..3.0,
        p_econd in 0.0f64..0.5,
        frac in 0.0f64..=1.0,
    ) {
        let k = (kbar as f64 * frac).floor() as usize;
        let t = tau(p, a);
        for regime in [FailureRegime::SubGaussian { p_econd }, FailureRegime::Gaussian] {
            let small = failure_bound(k, p, a, t, regime);
            let large = failure_bound(kbar, p, a, t, regime);
            prop_assert!(small.raw <= large.raw);
            prop_assert!((0.0..=1.0).contains(&small.clamped));
        }
    }

    #[test]
    fn corollary_two_at_unit_rho_equals_corollary_one(r2 in 1.0f64..100.0, a in 0.01f64..3.0) {
        let (xi_bar, r) = corollary_constants(r2, 1.0, a);
        prop_assert_eq!(xi_bar, 32.0 * r2 * r2 * (1.0 + a));
        prop_assert_eq!(r, 2.0 * r2 * (1.0 + a).sqrt());
    }

    #[test]
    fn oracle_bound_saturates_when_all_large(
        k in 0usize..20,
        sigma in 0.01f64..3.0,
        mu in 0.01f64..1.0,
        c in 0.1f64..50.0,
        scale in 1.0f64..10.0,
    ) {
        let beta: Vec<f64> = (0..k).map(|i| if i % 2 == 0 { scale } else { -scale } * sigma * mu).collect();
        let want = c * k as f64 * sigma * sigma * mu * mu;
        prop_assert!(rel_err(oracle_bound(&beta, sigma, mu, c), want) < 1e-12);
    }
}
