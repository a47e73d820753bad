//! Reference implementations used only as test oracles. None of them share
//! code with the library: dot products are plain index loops, least squares
//! goes through normal equations with Gaussian elimination, eigenvalues come
//! from cyclic Jacobi rotations and closed forms are evaluated in 180-bit
//! binary floating point.

#![allow(dead_code)]

use nalgebra::DMatrix;

pub fn col(x: &DMatrix<f64>, j: usize) -> Vec<f64> {
    (0..x.nrows()).map(|i| x[(i, j)]).collect()
}

pub fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn naive_norm(a: &[f64]) -> f64 {
    naive_dot(a, a).sqrt()
}

/// Solves `A z = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c] == 0.0 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..k {
            let f = a[r][c] / a[c][c];
            for cc in c..k {
                a[r][cc] -= f * a[c][cc];
            }
            b[r] -= f * b[c];
        }
    }
    let mut z = vec![0.0; k];
    for r in (0..k).rev() {
        let mut s = b[r];
        for cc in r + 1..k {
            s -= a[r][cc] * z[cc];
        }
        z[r] = s / a[r][r];
    }
    Some(z)
}

/// Least-squares coefficients on `support` from the normal equations.
pub fn normal_equations(x: &DMatrix<f64>, y: &[f64], support: &[usize]) -> Option<Vec<f64>> {
    let cols: Vec<Vec<f64>> = support.iter().map(|&j| col(x, j)).collect();
    let gram = cols
        .iter()
        .map(|a| cols.iter().map(|b| naive_dot(a, b)).collect())
        .collect();
    let rhs = cols.iter().map(|a| naive_dot(a, y)).collect();
    gauss_solve(gram, rhs)
}

pub fn residual(x: &DMatrix<f64>, y: &[f64], support: &[usize], coef: &[f64]) -> Vec<f64> {
    let mut r = y.to_vec();
    for (&j, &c) in support.iter().zip(coef) {
        for i in 0..r.len() {
            r[i] -= c * x[(i, j)];
        }
    }
    r
}

pub fn embed(p: usize, support: &[usize], coef: &[f64]) -> Vec<f64> {
    let mut b = vec![0.0; p];
    for (&j, &c) in support.iter().zip(coef) {
        b[j] = c;
    }
    b
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveRun {
    pub detected: Vec<usize>,
    pub beta_hat: Vec<f64>,
    pub stop: &'static str,
}

/// OMP that re-solves least squares from scratch at every step.
pub fn naive_omp(x: &DMatrix<f64>, y: &[f64], threshold: f64) -> NaiveRun {
    let (n, p) = x.shape();
    let y_norm = naive_norm(y);
    let mut detected: Vec<usize> = Vec::new();
    let stop = loop {
        if detected.len() == n.min(p) {
            break "max_steps_reached";
        }
        let coef = normal_equations(x, y, &detected).expect("oracle gram singular");
        let r = residual(x, y, &detected, &coef);
        let r_norm = naive_norm(&r);
        if r_norm <= 1e-12 * y_norm || r_norm == 0.0 {
            break "residual_zero";
        }
        let mut best: Option<(usize, f64)> = None;
        for j in (0..p).filter(|j| !detected.contains(j)) {
            let z = (naive_dot(&col(x, j), &r) / r_norm).abs();
            if best.is_none_or(|(_, b)| z > b) {
                best = Some((j, z));
            }
        }
        match best {
            Some((j, z)) if z > threshold => detected.push(j),
            _ => break "threshold_not_exceeded",
        }
    };
    let coef = normal_equations(x, y, &detected).expect("oracle gram singular");
    NaiveRun {
        beta_hat: embed(p, &detected, &coef),
        detected,
        stop,
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let k = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| m[(i, j)]).collect()).collect();
    let scale: f64 = a
        .iter()
        .flatten()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for pi in 0..k {
            for q in pi + 1..k {
                if a[pi][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[pi][pi]) / (2.0 * a[pi][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let (arp, arq) = (a[r][pi], a[r][q]);
                    a[r][pi] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for r in 0..k {
                    let (apr, aqr) = (a[pi][r], a[q][r]);
                    a[pi][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..k).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

/// Closed forms evaluated in 180-bit binary floating point (about 54 digits).
pub mod big {
    use dashu_base::SquareRoot;
    use dashu_float::round::mode::HalfEven;
    use dashu_float::FBig;

    pub const PRECISION: usize = 180;

    pub type Big = FBig<HalfEven, 2>;

    pub fn b(x: f64) -> Big {
        Big::try_from(x)
            .expect("finite input")
            .with_precision(PRECISION)
            .value()
    }

    pub fn f(x: &Big) -> f64 {
        x.to_f64().value()
    }

    pub fn sqrt(x: &Big) -> Big {
        x.sqrt()
    }

    pub fn pow(base: &Big, e: &Big) -> Big {
        (base.ln() * e).exp()
    }

    fn max(a: Big, c: Big) -> Big {
        if a >= c {
            a
        } else {
            c
        }
    }

    pub fn mu_n(p: f64, n: f64) -> f64 {
        f(&sqrt(&(b(2.0) * b(p).ln() / b(n))))
    }

    pub fn tau(p: f64, a: f64) -> f64 {
        f(&sqrt(&(b(2.0) * (b(1.0) + b(a)) * b(p).ln())))
    }

    pub fn f_delta(delta: f64) -> f64 {
        let d = b(1.0) - b(1.0) / sqrt(&(b(1.0) + b(delta)));
        f(&(b(1.0) / (&d * &d)))
    }

    pub fn r1(lmin: f64, lmax: f64, lambda: f64) -> Big {
        let l = b(lmin);
        max(b(lmax), b(lambda)) / (&l * &l * &l)
    }

    /// `(r1, r2)` for the sub-Gaussian regime.
    pub fn r1_r2_subgaussian(lmin: f64, lmax: f64, lambda: f64) -> (f64, f64) {
        let r1 = r1(lmin, lmax, lambda);
        let r2 = b(1.0) / sqrt(&b(lmin)) + sqrt(&r1);
        (f(&r1), f(&r2))
    }

    /// `(s_min, s_max, omega, nu1_tilde, nu1, eta_bar)`.
    pub fn population(omega0: f64, nu: f64, eta: f64, kbar: f64) -> [f64; 6] {
        let w = b(omega0);
        let half = &w / b(2.0);
        let eta_bar = b(eta) / b(kbar);
        [
            f(&(b(1.0) - &half)),
            f(&(b(1.0) + &half)),
            f(&w),
            f(&(&w * &eta_bar)),
            f(&(b(nu) + &w * &eta_bar)),
            f(&eta_bar),
        ]
    }

    /// `(lambda_min, lambda_max, lambda, h)` or `None` when `h >= 1`.
    pub fn gaussian_lambdas(omega0: f64, nu: f64, eta: f64, kbar: f64, p: f64, n: f64) -> Option<[f64; 4]> {
        let w = b(omega0);
        let s_min = b(1.0) - &w / b(2.0);
        let s_max = b(1.0) + &w / b(2.0);
        let eta_bar = b(eta) / b(kbar);
        let nu1t = &w * &eta_bar;
        let nu1 = b(nu) + &w * &eta_bar;
        let h = sqrt(&(b(kbar) / b(n))) + sqrt(&(b(2.0) * b(p).ln() / b(n)));
        if h >= b(1.0) {
            return None;
        }
        let hl = (b(1.0) - &h) * (b(1.0) - &h);
        let hu = (b(1.0) + &h) * (b(1.0) + &h);
        let kk = b(1.0) + b(1.0) / sqrt(&b(kbar));
        let lambda = (b(1.0) + &s_max * &s_max * &nu1t * &nu1t + &nu1 * &eta_bar) * &kk * &kk;
        Some([f(&(s_min * hl)), f(&(s_max * hu)), f(&lambda), f(&h)])
    }

    pub fn r2_gaussian(omega: f64, nu1_tilde: f64, nu1: f64, eta_bar: f64, lmin: f64, r1: f64) -> f64 {
        let inner = b(nu1_tilde) + sqrt(&((b(1.0) + b(nu1) * b(eta_bar)) / b(lmin)));
        f(&((b(1.0) - b(omega)) * inner + sqrt(&b(r1))))
    }

    pub fn rho(nu1: f64, omega: f64, kbar: f64) -> f64 {
        f(&((b(nu1) * (b(1.0) + b(1.0) / sqrt(&b(kbar))) + b(1.0)) / (b(1.0) - b(omega))))
    }

    pub fn default_alpha(sigma: f64, delta: f64, kbar: f64) -> f64 {
        f(&(b(sigma) * b(sigma) / ((b(1.0) + b(delta)) * b(kbar))))
    }

    pub fn xi(r1: f64, r2: f64, sigma: f64, kbar: f64, alpha: f64, delta: f64) -> Big {
        let d = b(1.0) - b(1.0) / sqrt(&(b(1.0) + b(delta)));
        let fd = b(1.0) / (&d * &d);
        let first = (b(1.0) + b(delta)) * b(r1);
        let second = b(sigma) * b(sigma) * b(r2) * b(r2) * fd / (b(kbar) * b(alpha));
        max(first, second)
    }

    /// Real-valued `xi kbar tau_eff^2` before rounding up.
    pub fn n_real(xi: f64, kbar: f64, tau_eff: f64) -> f64 {
        f(&(b(xi) * b(kbar) * b(tau_eff) * b(tau_eff)))
    }

    pub fn corollary(r2: f64, rho: f64, a: f64) -> (f64, f64) {
        let rr = b(r2) * b(rho);
        let xi_bar = b(32.0) * &rr * &rr * (b(1.0) + b(a));
        let r = b(2.0) * rr * sqrt(&(b(1.0) + b(a)));
        (f(&xi_bar), f(&r))
    }

    pub fn corollary_n_real(xi_bar: f64, kbar: f64, p: f64) -> f64 {
        f(&(b(xi_bar) * b(kbar) * b(p).ln()))
    }

    fn sqrt_two_over_pi() -> Big {
        sqrt(&(b(2.0) / pi()))
    }

    /// Machin: pi = 16 atan(1/5) - 4 atan(1/239).
    pub fn pi() -> Big {
        fn atan_inv(x: u32) -> Big {
            let xb = b(x as f64);
            let x2 = &xb * &xb;
            let mut term = b(1.0) / &xb;
            let mut sum = term.clone();
            for k in 1..200u32 {
                term /= &x2;
                let t = &term / b((2 * k + 1) as f64);
                if k % 2 == 1 {
                    sum -= t;
                } else {
                    sum += t;
                }
            }
            sum
        }
        b(16.0) * atan_inv(5) - b(4.0) * atan_inv(239)
    }

    pub fn failure_subgaussian(k: u64, p: f64, a: f64, p_econd: f64) -> f64 {
        let pa = pow(&b(p), &b(a));
        if k == 0 {
            return f(&(b(2.0) / pa));
        }
        let pa1 = pow(&b(p), &(b(1.0) + b(a)));
        let kb = b(k as f64);
        f(&(b(p_econd) + b(2.0) * (&kb + b(1.0)) / pa + b(2.0) * kb / pa1))
    }

    pub fn failure_gaussian(k: u64, p: f64, a: f64, tau: f64) -> f64 {
        let pa = pow(&b(p), &b(a));
        let c = sqrt_two_over_pi();
        if k == 0 {
            return f(&(b(1.0) / b(p) + c / (b(tau) * pa)));
        }
        let pa1 = pow(&b(p), &(b(1.0) + b(a)));
        let kb = b(k as f64);
        f(&(b(4.0) / b(p) + c / b(tau) * ((&kb + b(1.0)) / pa + kb / pa1)))
    }

    pub fn r2_star(omega0: f64, lmin: f64, r1: f64) -> f64 {
        let w = b(omega0);
        f(&((b(1.0) - &w) * (&w + sqrt(&((b(2.0) + &w) / b(lmin)))) + sqrt(&b(r1))))
    }

    pub fn oracle_bound(beta: &[f64], sigma: f64, mu_n: f64, c: f64) -> f64 {
        let level = b(sigma) * b(sigma) * b(mu_n) * b(mu_n);
        let mut s = b(0.0);
        for &x in beta {
            let sq = b(x) * b(x);
            s += if sq < level { sq } else { level.clone() };
        }
        f(&(b(c) * s))
    }

    pub fn oracle_constant(r: f64) -> f64 {
        f(&(b(4.0) / b(9.0) * b(r) * b(r)))
    }
}

/// Largest relative error, per formula, between the library and the 180-bit
/// closed forms over `draws` random valid parameter sets.
pub fn certify_formulas(draws: usize, seed: u64) -> Vec<(&'static str, f64)> {
    use omp_recover::theory as t;
    use rand::Rng;

    let mut rng = omp_recover::rng::rng(seed);
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut record = |name: &'static str, got: f64, want: f64| {
        let e = rel_err(got, want);
        match worst.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = slot.1.max(e),
            None => worst.push((name, e)),
        }
    };
    let log_uniform =
        |rng: &mut omp_recover::rng::TrialRng, lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();

    for _ in 0..draws {
        let p = log_uniform(&mut rng, 2.0, 1e6).round().max(2.0);
        let n = log_uniform(&mut rng, 1.0, 1e7).round().max(1.0);
        let a = rng.random_range(0.01..3.0);
        let delta = rng.random_range(0.01..50.0);
        let sigma = rng.random_range(0.01..5.0);
        let kbar = rng.random_range(1..=64) as f64;
        let k = rng.random_range(0..=64u64);

        record("mu_n", t::mu_n(p, n), big::mu_n(p, n));
        let tau = t::tau(p, a);
        record("tau", tau, big::tau(p, a));
        let rho_any = rng.random_range(1.0..4.0);
        record("tau1", t::tau1(tau, rho_any), big::f(&(big::b(rho_any) * big::b(tau))));
        record("f_delta", t::f_delta(delta).unwrap(), big::f_delta(delta));

        let lmin = rng.random_range(0.05..2.0);
        let lmax = rng.random_range(lmin..5.0);
        let lambda = rng.random_range(0.1..5.0);
        let (r1, r2) = t::r1_r2_subgaussian(lmin, lmax, lambda);
        let (o1, o2) = big::r1_r2_subgaussian(lmin, lmax, lambda);
        record("r1", r1, o1);
        record("r2_subgaussian", r2, o2);

        let omega0 = rng.random_range(0.0..0.99);
        let nu = rng.random_range(0.0..3.0);
        let eta = rng.random_range(0.0..10.0);
        let pop = t::derive_population_constants(omega0, nu, eta, kbar);
        let want = big::population(omega0, nu, eta, kbar);
        let got = [pop.s_min, pop.s_max, pop.omega, pop.nu1_tilde, pop.nu1, pop.eta_bar];
        for (g, w) in got.iter().zip(want) {
            record("population", *g, w);
        }

        // keep h away from 1 so (1 - h)^2 stays well conditioned
        let h_target = rng.random_range(0.05..0.9);
        let n_lam = ((kbar.sqrt() + (2.0 * p.ln()).sqrt()) / h_target).powi(2).ceil();
        let lam = t::gaussian_lambdas(&pop, p, n_lam, kbar).unwrap();
        let want = big::gaussian_lambdas(omega0, nu, eta, kbar, p, n_lam).unwrap();
        record("gaussian_lambda_min", lam.lambda_min, want[0]);
        record("gaussian_lambda_max", lam.lambda_max, want[1]);
        record("gaussian_lambda", lam.lambda, want[2]);
        record("gaussian_h", lam.h, want[3]);

        let r1g = t::r1(lam.lambda_min, lam.lambda_max, lam.lambda);
        record("r1", r1g, big::f(&big::r1(lam.lambda_min, lam.lambda_max, lam.lambda)));
        let r2g = t::r2_gaussian(&pop, lam.lambda_min, r1g);
        record(
            "r2_gaussian",
            r2g,
            big::r2_gaussian(pop.omega, pop.nu1_tilde, pop.nu1, pop.eta_bar, lam.lambda_min, r1g),
        );
        let rho = t::rho(pop.nu1, pop.omega, kbar);
        record("rho", rho, big::rho(pop.nu1, pop.omega, kbar));

        let alpha_default = t::default_alpha(sigma, delta, kbar);
        record("default_alpha", alpha_default, big::default_alpha(sigma, delta, kbar));
        let alpha = log_uniform(&mut rng, 1e-3, 10.0);
        let xi = t::xi(r1, r2, sigma, kbar, alpha, delta).unwrap();
        record("xi", xi, big::f(&big::xi(r1, r2, sigma, kbar, alpha, delta)));
        let n_real = big::n_real(xi, kbar, tau);
        let n_suff = t::sufficient_n(xi, kbar, tau);
        if (n_real - n_real.round()).abs() > 1e-9 * n_real {
            record("sufficient_n", n_suff as f64, n_real.ceil());
        }

        let (xi_bar, r) = t::corollary_constants(r2g, rho, a);
        let (w_xi_bar, w_r) = big::corollary(r2g, rho, a);
        record("xi_bar", xi_bar, w_xi_bar);
        record("r_recovery", r, w_r);
        let n_cor = big::corollary_n_real(xi_bar, kbar, p);
        if (n_cor - n_cor.round()).abs() > 1e-9 * n_cor {
            record("corollary_n", t::corollary_n(xi_bar, kbar, p) as f64, n_cor.ceil());
        }

        let p_econd = rng.random_range(0.0..0.5);
        let sub = t::failure_bound(k as usize, p, a, tau, t::FailureRegime::SubGaussian { p_econd });
        record(
            "failure_subgaussian",
            sub.raw,
            big::failure_subgaussian(k, p, a, p_econd),
        );
        let gau = t::failure_bound(k as usize, p, a, tau, t::FailureRegime::Gaussian);
        record("failure_gaussian", gau.raw, big::failure_gaussian(k, p, a, tau));

        record("r2_star", t::r2_star(omega0, lmin, r1), big::r2_star(omega0, lmin, r1));
        record("oracle_constant", t::oracle_constant(r), big::oracle_constant(r));
        let mu = t::mu_n(p, n);
        let beta: Vec<f64> = (0..12)
            .map(|_| match rng.random_range(0..3) {
                0 => 0.0,
                _ => rng.random_range(-3.0..3.0) * sigma * mu,
            })
            .collect();
        let c = rng.random_range(0.1..100.0);
        record(
            "oracle_bound",
            t::oracle_bound(&beta, sigma, mu, c),
            big::oracle_bound(&beta, sigma, mu, c),
        );
    }
    worst
}
