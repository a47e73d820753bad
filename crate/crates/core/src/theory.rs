//! Closed-form constants behind the recovery guarantees.
//!
//! Two regimes are covered. The sub-Gaussian regime takes the eigenvalue
//! band `(lambda_min, lambda_max)` and noise-energy constant `lambda` as
//! inputs. The correlated Gaussian regime derives them from the incoherence
//! level `omega0`, the tail cutoff `nu` and the tail l1 budget `eta`, and
//! the derived values depend on `n` through `h = sqrt(kbar/n) + mu_n`.
//!
//! All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimizer of `(1 + delta) f(delta)`.
pub const DELTA_STAR: f64 = 3.0;

/// Noise level scale `sqrt(2 log p / n)`.
pub fn mu_n(p: f64, n: f64) -> f64 {
    (2.0 * p.ln() / n).sqrt()
}

/// Detection threshold `sqrt(2 (1 + a) log p)`.
pub fn tau(p: f64, a: f64) -> f64 {
    (2.0 * (1.0 + a) * p.ln()).sqrt()
}

/// Inflated threshold used for correlated designs.
pub fn tau1(tau: f64, rho: f64) -> f64 {
    rho * tau
}

pub fn f_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("f(delta) needs delta > 0, got {delta}")));
    }
    let gap = 1.0 - 1.0 / (1.0 + delta).sqrt();
    Ok(1.0 / (gap * gap))
}

pub fn r1(lambda_min: f64, lambda_max: f64, lambda: f64) -> f64 {
    lambda_max.max(lambda) / (lambda_min * lambda_min * lambda_min)
}

/// `(r1, r2)` for the sub-Gaussian regime, `r2 = 1/sqrt(lambda_min) + sqrt(r1)`.
pub fn r1_r2_subgaussian(lambda_min: f64, lambda_max: f64, lambda: f64) -> (f64, f64) {
    let r1 = r1(lambda_min, lambda_max, lambda);
    let r2 = 1.0 / lambda_min.sqrt() + r1.sqrt();
    assert_r2_dominates(r1, r2);
    (r1, r2)
}

fn assert_r2_dominates(r1: f64, r2: f64) {
    assert!(r2 >= r1.sqrt(), "r2 = {r2} fell below sqrt(r1) = {}", r1.sqrt());
}

/// Population constants implied by an incoherence bound
/// `gamma(Sigma) <= omega0 / (2 kbar)` and a tail budget `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationConstants {
    pub s_min: f64,
    pub s_max: f64,
    pub omega: f64,
    pub nu1_tilde: f64,
    pub nu1: f64,
    pub eta_bar: f64,
}

pub fn derive_population_constants(omega0: f64, nu: f64, eta: f64, kbar: f64) -> PopulationConstants {
    let eta_bar = eta / kbar;
    PopulationConstants {
        s_min: 1.0 - omega0 / 2.0,
        s_max: 1.0 + omega0 / 2.0,
        omega: omega0,
        nu1_tilde: omega0 * eta_bar,
        nu1: nu + omega0 * eta_bar,
        eta_bar,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLambdas {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda: f64,
    pub h: f64,
    pub h_ell: f64,
    pub h_u: f64,
}

/// Eigenvalue band and noise constant for the Gaussian regime at sample size `n`.
pub fn gaussian_lambdas(pop: &PopulationConstants, p: f64, n: f64, kbar: f64) -> Result<GaussianLambdas> {
    let h = (kbar / n).sqrt() + mu_n(p, n);
    lambdas_from_h(pop, h, kbar).ok_or(Error::HNotLessThanOne { h, n: n as u64 })
}

/// Same as [`gaussian_lambdas`] with `h` given directly; `None` when `h >= 1`.
pub fn lambdas_from_h(pop: &PopulationConstants, h: f64, kbar: f64) -> Option<GaussianLambdas> {
    if !(h < 1.0) {
        return None;
    }
    let h_ell = (1.0 - h) * (1.0 - h);
    let h_u = (1.0 + h) * (1.0 + h);
    let inflate = 1.0 + 1.0 / kbar.sqrt();
    let lambda =
        (1.0 + pop.s_max * pop.s_max * pop.nu1_tilde * pop.nu1_tilde + pop.nu1 * pop.eta_bar) * inflate * inflate;
    Some(GaussianLambdas {
        lambda_min: pop.s_min * h_ell,
        lambda_max: pop.s_max * h_u,
        lambda,
        h,
        h_ell,
        h_u,
    })
}

pub fn r2_gaussian(pop: &PopulationConstants, lambda_min: f64, r1: f64) -> f64 {
    let r2 = (1.0 - pop.omega) * (pop.nu1_tilde + ((1.0 + pop.nu1 * pop.eta_bar) / lambda_min).sqrt()) + r1.sqrt();
    assert_r2_dominates(r1, r2);
    r2
}

/// Threshold inflation factor; equals 1 exactly when `nu1 = 0` and `omega = 0`.
pub fn rho(nu1: f64, omega: f64, kbar: f64) -> f64 {
    (nu1 * (1.0 + 1.0 / kbar.sqrt()) + 1.0) / (1.0 - omega)
}

/// `sigma^2 / ((1 + delta) kbar)`, the accuracy level used by the corollaries.
pub fn default_alpha(sigma: f64, delta: f64, kbar: f64) -> f64 {
    sigma * sigma / ((1.0 + delta) * kbar)
}

/// `max{(1 + delta) r1, sigma^2 r2^2 f(delta) / (kbar alpha)}`.
pub fn xi(r1: f64, r2: f64, sigma: f64, kbar: f64, alpha: f64, delta: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be > 0, got {alpha}")));
    }
    let f = f_delta(delta)?;
    let eigen_branch = (1.0 + delta) * r1;
    let noise_branch = sigma * sigma * r2 * r2 * f / (kbar * alpha);
    Ok(eigen_branch.max(noise_branch))
}

/// `alpha` at which the two branches of [`xi`] meet.
pub fn xi_crossover_alpha(r1: f64, r2: f64, sigma: f64, kbar: f64, delta: f64) -> Result<f64> {
    let f = f_delta(delta)?;
    Ok(sigma * sigma * r2 * r2 * f / ((1.0 + delta) * r1 * kbar))
}

/// `ceil(xi * kbar * tau_eff^2)`.
pub fn sufficient_n(xi: f64, kbar: f64, tau_eff: f64) -> u64 {
    (xi * kbar * tau_eff * tau_eff).ceil() as u64
}

/// `(xi_bar, r)` with `xi_bar = 32 (r2 rho)^2 (1 + a)` and `r = 2 r2 rho sqrt(1 + a)`.
pub fn corollary_constants(r2: f64, rho: f64, a: f64) -> (f64, f64) {
    let scaled = r2 * rho;
    (32.0 * scaled * scaled * (1.0 + a), 2.0 * scaled * (1.0 + a).sqrt())
}

/// `ceil(xi_bar * kbar * log p)`.
pub fn corollary_n(xi_bar: f64, kbar: f64, p: f64) -> u64 {
    (xi_bar * kbar * p.ln()).ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    SubGaussian,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FailureRegime {
    /// `p_econd` is the probability that the eigenvalue or noise-energy
    /// conditions fail; it depends on the ensemble and is supplied by the caller.
    SubGaussian {
        p_econd: f64,
    },
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureBound {
    pub raw: f64,
    pub clamped: f64,
}

impl FailureBound {
    fn new(raw: f64) -> Self {
        FailureBound {
            raw,
            clamped: raw.clamp(0.0, 1.0),
        }
    }
}

/// Failure probability bound for true sparsity `k`. `tau` is the unscaled
/// threshold from [`tau`] in both regimes.
pub fn failure_bound(k: usize, p: f64, a: f64, tau: f64, regime: FailureRegime) -> FailureBound {
    let kf = k as f64;
    let pa = p.powf(a);
    let pa1 = p.powf(1.0 + a);
    let raw = match regime {
        FailureRegime::SubGaussian { .. } if k == 0 => 2.0 / pa,
        FailureRegime::SubGaussian { p_econd } => p_econd + 2.0 * (kf + 1.0) / pa + 2.0 * kf / pa1,
        FailureRegime::Gaussian if k == 0 => 1.0 / p + (2.0 / std::f64::consts::PI).sqrt() / (tau * pa),
        FailureRegime::Gaussian => 4.0 / p + (2.0 / std::f64::consts::PI).sqrt() / tau * ((kf + 1.0) / pa + kf / pa1),
    };
    FailureBound::new(raw)
}

/// `r2` evaluated at `nu = 1`, `eta = kbar` for exactly sparse vectors.
pub fn r2_star(omega0: f64, lambda_min: f64, r1: f64) -> f64 {
    let r2 = (1.0 - omega0) * (omega0 + ((2.0 + omega0) / lambda_min).sqrt()) + r1.sqrt();
    assert_r2_dominates(r1, r2);
    r2
}

/// `c * sum_j min(beta_j^2, sigma^2 mu_n^2)`.
pub fn oracle_bound(beta: &[f64], sigma: f64, mu_n: f64, c_constant: f64) -> f64 {
    let level = sigma * sigma * mu_n * mu_n;
    c_constant * beta.iter().map(|b| (b * b).min(level)).sum::<f64>()
}

/// `(4/9) r^2`.
pub fn oracle_constant(r_recovery: f64) -> f64 {
    4.0 / 9.0 * r_recovery * r_recovery
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBound {
    /// `C = (4/9) r^2`.
    pub c_constant: f64,
    pub r2_star: f64,
    /// `C1 = (4/9) (r*)^2` with `r* = 2 r2* rho sqrt(1 + a)`.
    pub c1_constant: f64,
}

impl OracleBound {
    pub fn bound_value(&self, beta: &[f64], sigma: f64, mu_n: f64) -> f64 {
        oracle_bound(beta, sigma, mu_n, self.c_constant)
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Domain(msg()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubGaussianRegimeParams {
    pub p: usize,
    pub kbar: usize,
    pub a: f64,
    pub sigma: f64,
    /// Defaults to [`default_alpha`].
    pub alpha: Option<f64>,
    pub delta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda: f64,
    /// Probability that the eigenvalue or noise conditions fail.
    pub p_econd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianRegimeParams {
    pub p: usize,
    pub kbar: usize,
    pub a: f64,
    pub sigma: f64,
    pub omega0: f64,
    pub nu: f64,
    pub eta: f64,
    pub alpha: Option<f64>,
    pub delta: f64,
}

/// Everything derived from [`GaussianRegimeParams`] at a fixed `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianDerived {
    pub population: PopulationConstants,
    pub lambdas: GaussianLambdas,
    pub r1: f64,
    pub r2: f64,
    pub rho: f64,
}

impl GaussianRegimeParams {
    pub fn population(&self) -> PopulationConstants {
        derive_population_constants(self.omega0, self.nu, self.eta, self.kbar as f64)
    }

    pub fn derive(&self, n: u64) -> Result<GaussianDerived> {
        let population = self.population();
        let lambdas = gaussian_lambdas(&population, self.p as f64, n as f64, self.kbar as f64)?;
        let r1 = r1(lambdas.lambda_min, lambdas.lambda_max, lambdas.lambda);
        let r2 = r2_gaussian(&population, lambdas.lambda_min, r1);
        let rho = rho(population.nu1, population.omega, self.kbar as f64);
        Ok(GaussianDerived {
            population,
            lambdas,
            r1,
            r2,
            rho,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum RegimeParams {
    SubGaussian(SubGaussianRegimeParams),
    Gaussian(GaussianRegimeParams),
}

/// All scalars for one regime, evaluated at a concrete `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub regime: Regime,
    pub n: u64,
    pub p: usize,
    pub k: usize,
    pub kbar: usize,
    pub a: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub delta: f64,
    pub mu_n: f64,
    pub tau: f64,
    pub tau1: f64,
    pub rho: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda: f64,
    pub r1: f64,
    pub r2: f64,
    pub f_delta: f64,
    pub xi: f64,
    /// `ceil(xi * kbar * tau_eff^2)` with `tau_eff` the regime's threshold.
    pub n_sufficient: u64,
    pub xi_bar: f64,
    pub r_recovery: f64,
    /// `ceil(xi_bar * kbar * log p)`.
    pub n_corollary: u64,
    pub perr_bound: f64,
    pub perr_bound_clamped: f64,
    pub oracle: OracleBound,
    pub gaussian: Option<GaussianDerived>,
}

impl TheoryConstants {
    /// Threshold the algorithm runs with in this regime.
    pub fn threshold(&self) -> f64 {
        self.tau1
    }
}

impl RegimeParams {
    pub fn regime(&self) -> Regime {
        match self {
            RegimeParams::SubGaussian(_) => Regime::SubGaussian,
            RegimeParams::Gaussian(_) => Regime::Gaussian,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            RegimeParams::SubGaussian(s) => s.p,
            RegimeParams::Gaussian(g) => g.p,
        }
    }

    pub fn kbar(&self) -> usize {
        match self {
            RegimeParams::SubGaussian(s) => s.kbar,
            RegimeParams::Gaussian(g) => g.kbar,
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            RegimeParams::SubGaussian(s) => s.sigma,
            RegimeParams::Gaussian(g) => g.sigma,
        }
    }

    pub fn a(&self) -> f64 {
        match self {
            RegimeParams::SubGaussian(s) => s.a,
            RegimeParams::Gaussian(g) => g.a,
        }
    }

    fn delta(&self) -> f64 {
        match self {
            RegimeParams::SubGaussian(s) => s.delta,
            RegimeParams::Gaussian(g) => g.delta,
        }
    }

    pub fn alpha(&self) -> f64 {
        let explicit = match self {
            RegimeParams::SubGaussian(s) => s.alpha,
            RegimeParams::Gaussian(g) => g.alpha,
        };
        explicit.unwrap_or_else(|| default_alpha(self.sigma(), self.delta(), self.kbar() as f64))
    }

    pub fn validate(&self) -> Result<()> {
        let (p, kbar, a, sigma, delta) = (self.p(), self.kbar(), self.a(), self.sigma(), self.delta());
        check(p >= 2, || format!("p must be >= 2, got {p}"))?;
        check(kbar >= 1, || "kbar must be >= 1".into())?;
        check(a > 0.0 && a.is_finite(), || format!("a must be > 0, got {a}"))?;
        check(sigma > 0.0 && sigma.is_finite(), || {
            format!("sigma must be > 0, got {sigma}")
        })?;
        check(delta > 0.0 && delta.is_finite(), || {
            format!("delta must be > 0, got {delta}")
        })?;
        let alpha = self.alpha();
        check(alpha > 0.0 && alpha.is_finite(), || {
            format!("alpha must be > 0, got {alpha}")
        })?;
        match self {
            RegimeParams::SubGaussian(s) => {
                check(s.lambda_min > 0.0, || {
                    format!("lambda_min must be > 0, got {}", s.lambda_min)
                })?;
                check(s.lambda_max >= s.lambda_min, || {
                    format!("lambda_max ({}) < lambda_min ({})", s.lambda_max, s.lambda_min)
                })?;
                check(s.lambda > 0.0, || format!("lambda must be > 0, got {}", s.lambda))?;
                check((0.0..=1.0).contains(&s.p_econd), || {
                    format!("p_econd must lie in [0, 1], got {}", s.p_econd)
                })?;
            }
            RegimeParams::Gaussian(g) => {
                check((0.0..1.0).contains(&g.omega0), || {
                    format!("omega0 must lie in [0, 1), got {}", g.omega0)
                })?;
                check(g.nu >= 0.0, || format!("nu must be >= 0, got {}", g.nu))?;
                check(g.eta >= 0.0, || format!("eta must be >= 0, got {}", g.eta))?;
            }
        }
        Ok(())
    }

    /// Evaluates every constant at sample size `n` for true sparsity `k`.
    pub fn constants(&self, n: u64, k: usize) -> Result<TheoryConstants> {
        self.validate()?;
        check(n >= 1, || "n must be >= 1".into())?;
        let p = self.p() as f64;
        let kbar = self.kbar() as f64;
        let (a, sigma, delta, alpha) = (self.a(), self.sigma(), self.delta(), self.alpha());
        let tau = tau(p, a);
        let (lambda_min, lambda_max, lambda, r1, r2, rho, gaussian, failure_regime, r2_star_value) = match self {
            RegimeParams::SubGaussian(s) => {
                let (r1, r2) = r1_r2_subgaussian(s.lambda_min, s.lambda_max, s.lambda);
                let r2s = r2_star(0.0, s.lambda_min, r1);
                (
                    s.lambda_min,
                    s.lambda_max,
                    s.lambda,
                    r1,
                    r2,
                    1.0,
                    None,
                    FailureRegime::SubGaussian { p_econd: s.p_econd },
                    r2s,
                )
            }
            RegimeParams::Gaussian(g) => {
                let d = g.derive(n)?;
                let r2s = r2_star(g.omega0, d.lambdas.lambda_min, d.r1);
                (
                    d.lambdas.lambda_min,
                    d.lambdas.lambda_max,
                    d.lambdas.lambda,
                    d.r1,
                    d.r2,
                    d.rho,
                    Some(d),
                    FailureRegime::Gaussian,
                    r2s,
                )
            }
        };
        let tau1 = tau1(tau, rho);
        let xi = xi(r1, r2, sigma, kbar, alpha, delta)?;
        let (xi_bar, r_recovery) = corollary_constants(r2, rho, a);
        let bound = failure_bound(k, p, a, tau, failure_regime);
        let (_, r_star) = corollary_constants(r2_star_value, rho, a);
        Ok(TheoryConstants {
            regime: self.regime(),
            n,
            p: self.p(),
            k,
            kbar: self.kbar(),
            a,
            sigma,
            alpha,
            delta,
            mu_n: mu_n(p, n as f64),
            tau,
            tau1,
            rho,
            lambda_min,
            lambda_max,
            lambda,
            r1,
            r2,
            f_delta: f_delta(delta)?,
            xi,
            n_sufficient: sufficient_n(xi, kbar, tau1),
            xi_bar,
            r_recovery,
            n_corollary: corollary_n(xi_bar, kbar, p),
            perr_bound: bound.raw,
            perr_bound_clamped: bound.clamped,
            oracle: OracleBound {
                c_constant: oracle_constant(r_recovery),
                r2_star: r2_star_value,
                c1_constant: oracle_constant(r_star),
            },
            gaussian,
        })
    }

    /// Smallest `n` with `n >= ceil(xi(n) * kbar * tau_eff^2)`.
    pub fn theorem_n(&self) -> Result<u64> {
        self.validate()?;
        smallest_self_consistent_n(|n| self.constants(n, 0).map(|c| c.n_sufficient))
    }

    /// Smallest `n` with `n >= ceil(xi_bar(n) * kbar * log p)`.
    pub fn corollary_n(&self) -> Result<u64> {
        self.validate()?;
        smallest_self_consistent_n(|n| self.constants(n, 0).map(|c| c.n_corollary))
    }
}

/// Finds the smallest `n` with `n >= required(n)`, where `required` is
/// non-increasing in `n`. `HNotLessThanOne` marks `n` as infeasible.
fn smallest_self_consistent_n(required: impl Fn(u64) -> Result<u64>) -> Result<u64> {
    let feasible = |n: u64| -> Result<bool> {
        match required(n) {
            Ok(req) => Ok(n >= req),
            Err(Error::HNotLessThanOne { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    let mut hi = 1u64;
    while !feasible(hi)? {
        hi = hi
            .checked_mul(2)
            .filter(|&h| h < 1 << 62)
            .ok_or_else(|| Error::Domain("no finite sample size satisfies the requirement".into()))?;
    }
    let mut lo = hi / 2;
    if lo == 0 {
        return Ok(hi);
    }
    // invariant: feasible(hi), !feasible(lo)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
