//! Seeded Monte Carlo runner. Each trial draws `(X, beta, noise)` from
//! streams derived from `(master_seed, trial_index)`, runs OMP at the
//! regime's threshold and scores the result against the generator's support.
//! Aggregation is an ordered fold, so reports do not depend on scheduling.

use std::cell::RefCell;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{
    sample_coefficients, sample_noise, CoefficientDraw, CoefficientSpec, DesignSampler, DesignSpec, Ensemble,
    GramSampler, NoiseKind,
};
use crate::error::{Error, Result};
use crate::linalg::column;
use crate::omp::{run_omp, run_omp_gram, OmpConfig, OmpTrace, RegressionInstance, SelectionRule, StopReason};
use crate::rng::{derive_seed, rng, stream_seed, Stream};
use crate::theory::{mu_n, tau, Regime, RegimeParams, TheoryConstants};

thread_local! {
    // design storage reused across trials on one worker; avoids faulting in
    // fresh pages for every large draw
    static DESIGN_STORAGE: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// Largest `p` and subset size accepted by [`brute_force_best_subset`].
pub const BRUTE_FORCE_MAX_P: usize = 24;
pub const BRUTE_FORCE_MAX_K: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum NRule {
    Explicit {
        n: u64,
    },
    /// Smallest self-consistent `n = ceil(xi kbar tau1^2)`.
    FromTheorem,
    /// Smallest self-consistent `n = ceil(xi_bar kbar log p)`.
    FromCorollary,
}

/// How `beta_min` is fixed once `n` is known.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BetaMinRule {
    /// Use the value in the coefficient spec.
    #[default]
    FromSpec,
    /// `factor * r * sigma * mu_n`.
    RecoveryMultiple { factor: f64 },
}

/// How each trial's inputs reach the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Draw `X` and the noise entrywise and run on the design.
    #[default]
    Direct,
    /// Draw `(X^T X, X^T noise, |noise|^2)` from their joint Wishart law and
    /// run on inner products. Same distribution of every outcome for Gaussian
    /// designs with Gaussian noise, at a cost independent of `n`.
    CrossProducts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub theory: RegimeParams,
    pub ensemble: Ensemble,
    pub coefficients: CoefficientSpec,
    #[serde(default)]
    pub beta_min_rule: BetaMinRule,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub selection_rule: SelectionRule,
    pub trials: usize,
    pub master_seed: u64,
    pub n_rule: NRule,
    #[serde(default)]
    pub record_traces: bool,
    #[serde(default)]
    pub sampling: Sampling,
}

impl ExperimentConfig {
    pub fn regime(&self) -> Regime {
        self.theory.regime()
    }

    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        self.theory.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidSpec("trials must be >= 1".into()));
        }
        let n = match self.n_rule {
            NRule::Explicit { n } => n,
            NRule::FromTheorem => self.theory.theorem_n()?,
            NRule::FromCorollary => self.theory.corollary_n()?,
        };
        let n_usize = usize::try_from(n)
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| Error::InvalidSpec(format!("sample size {n} is not usable")))?;
        let k = self.coefficients.k();
        let theory = self.theory.constants(n, k)?;
        let coefficients = match self.beta_min_rule {
            BetaMinRule::FromSpec => self.coefficients.clone(),
            BetaMinRule::RecoveryMultiple { factor } => self
                .coefficients
                .clone()
                .with_beta_min(factor * theory.r_recovery * theory.sigma * theory.mu_n),
        };
        let design = DesignSpec {
            n: n_usize,
            p: self.theory.p(),
            ensemble: self.ensemble.clone(),
        };
        let sampler = DesignSampler::new(&design)?;
        let gram_sampler = match self.sampling {
            Sampling::Direct => None,
            Sampling::CrossProducts => {
                if self.noise != NoiseKind::Gaussian {
                    return Err(Error::InvalidSpec("cross-product sampling needs Gaussian noise".into()));
                }
                Some(GramSampler::new(&design, theory.sigma)?)
            }
        };
        Ok(ResolvedExperiment {
            config: self.clone(),
            design,
            coefficients,
            theory,
            sampler,
            gram_sampler,
        })
    }
}

/// An [`ExperimentConfig`] with `n`, `beta_min` and every constant fixed.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    pub design: DesignSpec,
    pub coefficients: CoefficientSpec,
    pub theory: TheoryConstants,
    sampler: DesignSampler,
    gram_sampler: Option<GramSampler>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_index: u64,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub s_hat: Vec<usize>,
    pub s_true: Vec<usize>,
    pub subset_ok: bool,
    pub partial_ok: bool,
    pub exact_ok: bool,
    pub large_recovered: bool,
    pub l2_error_sq: f64,
    pub oracle_bound_value: f64,
    pub steps: usize,
    pub stop_reason: StopReason,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace: Option<OmpTrace>,
}

impl TrialOutcome {
    /// `S_hat` within `S` and the missed mass bounded by `alpha` per miss.
    pub fn theorem_event(&self) -> bool {
        self.subset_ok && self.partial_ok
    }
}

/// Scores a detected set against the generator's support. Returns
/// `(subset_ok, partial_ok, exact_ok, large_recovered, l2_error_sq)`.
pub fn score_outcome(
    beta: &[f64],
    s_true: &[usize],
    trace: &OmpTrace,
    alpha: f64,
    large_cutoff: f64,
) -> (bool, bool, bool, bool, f64) {
    let s_hat = trace.support();
    let singular = trace.stop_reason == StopReason::GramSingular;
    let subset_ok = !singular && s_hat.iter().all(|j| s_true.binary_search(j).is_ok());
    let missed: Vec<usize> = s_true
        .iter()
        .copied()
        .filter(|j| s_hat.binary_search(j).is_err())
        .collect();
    let missed_mass: f64 = missed.iter().map(|&j| beta[j] * beta[j]).sum();
    let partial_ok = missed.is_empty() || missed_mass <= alpha * missed.len() as f64;
    let exact_ok = subset_ok && missed.is_empty();
    let large_recovered = beta
        .iter()
        .enumerate()
        .filter(|(_, b)| b.abs() > large_cutoff)
        .all(|(j, _)| s_hat.binary_search(&j).is_ok());
    let l2_error_sq = trace.beta_hat.iter().zip(beta).map(|(a, b)| (a - b) * (a - b)).sum();
    (subset_ok, partial_ok, exact_ok, large_recovered, l2_error_sq)
}

impl ResolvedExperiment {
    pub fn n(&self) -> usize {
        self.design.n
    }

    pub fn trial_seed(&self, trial_index: u64) -> u64 {
        derive_seed(self.config.master_seed, trial_index)
    }

    /// Draws the regression instance of one trial. Not available under
    /// [`Sampling::CrossProducts`], which never forms `X`.
    pub fn instance(&self, trial_index: u64) -> Result<(RegressionInstance, Vec<usize>)> {
        if self.gram_sampler.is_some() {
            return Err(Error::InvalidSpec(
                "cross-product sampling does not form the design".into(),
            ));
        }
        let seed = self.trial_seed(trial_index);
        let draw = self.coefficients_for(seed)?;
        let (n, sigma) = (self.design.n, self.theory.sigma);
        let noise = sample_noise(n, sigma, self.config.noise, stream_seed(seed, Stream::Noise))?;
        let storage = DESIGN_STORAGE.with(|cell| std::mem::take(&mut *cell.borrow_mut()));
        let x = self.sampler.sample_into(stream_seed(seed, Stream::Design), storage);
        Ok((RegressionInstance::new(x, draw.beta, noise, sigma)?, draw.s_set))
    }

    fn coefficients_for(&self, trial_seed: u64) -> Result<CoefficientDraw> {
        let (n, p) = (self.design.n, self.design.p);
        sample_coefficients(
            &self.coefficients,
            p,
            n,
            self.theory.sigma,
            stream_seed(trial_seed, Stream::Coefficients),
        )
    }

    pub fn run_trial(&self, trial_index: u64) -> Result<TrialOutcome> {
        let omp = OmpConfig::new(self.theory.threshold()).with_rule(self.config.selection_rule);
        let (beta, s_true, trace) = match &self.gram_sampler {
            Some(gram) => {
                let seed = self.trial_seed(trial_index);
                let draw = self.coefficients_for(seed)?;
                let products = gram.sample(stream_seed(seed, Stream::Design));
                let system = products.system(&draw.beta, self.design.n)?;
                let trace = run_omp_gram(&system, &omp)?;
                (draw.beta, draw.s_set, trace)
            }
            None => {
                let (instance, s_true) = self.instance(trial_index)?;
                let trace = run_omp(&instance, &omp);
                let beta = instance.beta().to_vec();
                let storage: Vec<f64> = instance.into_x_matrix().data.into();
                DESIGN_STORAGE.with(|cell| *cell.borrow_mut() = storage);
                (beta, s_true, trace?)
            }
        };
        let th = &self.theory;
        let k = s_true.len();
        let large_cutoff = th.r_recovery * th.sigma * (k as f64).sqrt() * th.mu_n;
        let oracle_bound_value = th.oracle.bound_value(&beta, th.sigma, th.mu_n);
        let (subset_ok, partial_ok, exact_ok, large_recovered, l2_error_sq) =
            score_outcome(&beta, &s_true, &trace, th.alpha, large_cutoff);
        Ok(TrialOutcome {
            trial_index,
            seed: self.trial_seed(trial_index),
            n: self.design.n,
            p: self.design.p,
            k,
            s_hat: trace.support(),
            s_true,
            subset_ok,
            partial_ok,
            exact_ok,
            large_recovered,
            l2_error_sq,
            oracle_bound_value,
            steps: trace.selecting_steps(),
            stop_reason: trace.stop_reason,
            trace: self.config.record_traces.then_some(trace),
        })
    }

    /// Runs every trial on `workers` threads (`None`: rayon's default).
    pub fn run(&self, workers: Option<usize>) -> Result<ExperimentReport> {
        let start = Instant::now();
        let indices: Vec<u64> = (0..self.config.trials as u64).collect();
        let outcomes: Vec<Result<TrialOutcome>> = match workers {
            Some(w) => rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidSpec(format!("cannot start worker pool: {e}")))?
                .install(|| indices.par_iter().map(|&t| self.run_trial(t)).collect()),
            None => indices.par_iter().map(|&t| self.run_trial(t)).collect(),
        };
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(ExperimentReport::aggregate(self, outcomes, start.elapsed()))
    }
}

pub fn run_trial(config: &ExperimentConfig, trial_index: u64) -> Result<TrialOutcome> {
    config.resolve()?.run_trial(trial_index)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.resolve()?.run(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricRates {
    pub subset: f64,
    pub partial: f64,
    pub theorem_event: f64,
    pub exact: f64,
    pub large_recovered: f64,
}

impl MetricRates {
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("subset", self.subset),
            ("partial", self.partial),
            ("theorem_event", self.theorem_event),
            ("exact", self.exact),
            ("large_recovered", self.large_recovered),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub n: usize,
    pub beta_min: f64,
    pub theory: TheoryConstants,
    pub trials: usize,
    /// Fraction of trials outside `{S_hat within S, missed mass <= alpha |F_hat|}`.
    pub empirical_failure_rate: f64,
    /// Fraction of trials with `S_hat != S`.
    pub exact_failure_rate: f64,
    /// Clamped failure probability bound.
    pub theoretical_bound: f64,
    pub theoretical_bound_raw: f64,
    /// `3 sqrt(b (1 - b) / trials)` for the clamped bound `b`.
    pub monte_carlo_slack: f64,
    pub oracle_violations: usize,
    /// Oracle violations among trials with `S_hat within S`.
    pub oracle_violations_subset: usize,
    pub gram_singular_trials: usize,
    pub rates: MetricRates,
    #[serde(skip)]
    pub outcomes: Vec<TrialOutcome>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl ExperimentReport {
    fn aggregate(resolved: &ResolvedExperiment, outcomes: Vec<TrialOutcome>, wall_time: Duration) -> Self {
        let t = outcomes.len() as f64;
        let rate = |f: &dyn Fn(&TrialOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / t;
        let rates = MetricRates {
            subset: rate(&|o| o.subset_ok),
            partial: rate(&|o| o.partial_ok),
            theorem_event: rate(&|o| o.theorem_event()),
            exact: rate(&|o| o.exact_ok),
            large_recovered: rate(&|o| o.large_recovered),
        };
        let violates = |o: &&TrialOutcome| o.l2_error_sq > o.oracle_bound_value;
        let bound = resolved.theory.perr_bound_clamped;
        ExperimentReport {
            config: resolved.config.clone(),
            n: resolved.design.n,
            beta_min: resolved.coefficients.beta_min(),
            theory: resolved.theory.clone(),
            trials: outcomes.len(),
            empirical_failure_rate: 1.0 - rates.theorem_event,
            exact_failure_rate: 1.0 - rates.exact,
            theoretical_bound: bound,
            theoretical_bound_raw: resolved.theory.perr_bound,
            monte_carlo_slack: monte_carlo_slack(bound, outcomes.len()),
            oracle_violations: outcomes.iter().filter(violates).count(),
            oracle_violations_subset: outcomes.iter().filter(|o| o.subset_ok).filter(violates).count(),
            gram_singular_trials: outcomes
                .iter()
                .filter(|o| o.stop_reason == StopReason::GramSingular)
                .count(),
            rates,
            outcomes,
            wall_time,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Three binomial standard deviations at rate `bound`.
pub fn monte_carlo_slack(bound: f64, trials: usize) -> f64 {
    3.0 * (bound * (1.0 - bound) / trials as f64).sqrt()
}

pub const TRIALS_CSV_HEADER: [&str; 13] = [
    "trial_index",
    "seed",
    "n",
    "p",
    "k",
    "steps",
    "subset_ok",
    "partial_ok",
    "exact_ok",
    "large_recovered",
    "l2_error_sq",
    "oracle_bound_value",
    "stop_reason",
];

pub fn write_trials_csv<W: Write>(outcomes: &[TrialOutcome], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRIALS_CSV_HEADER)?;
    for o in outcomes {
        w.write_record([
            o.trial_index.to_string(),
            o.seed.to_string(),
            o.n.to_string(),
            o.p.to_string(),
            o.k.to_string(),
            o.steps.to_string(),
            o.subset_ok.to_string(),
            o.partial_ok.to_string(),
            o.exact_ok.to_string(),
            o.large_recovered.to_string(),
            format!("{:e}", o.l2_error_sq),
            format!("{:e}", o.oracle_bound_value),
            o.stop_reason.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, report.to_json()? + "\n")?;
    Ok(())
}

/// Exhaustive minimizer of `|Y - X_T b|^2` over `|T| <= max_k`. Ties within
/// `1e-12 |Y|^2` go to the smaller set, then to the lexicographically first.
pub fn brute_force_best_subset(instance: &RegressionInstance, max_k: usize) -> Result<(Vec<usize>, f64)> {
    brute_force_on(instance.x_matrix(), instance.response(), max_k)
}

pub fn brute_force_on(x: &DMatrix<f64>, y: &[f64], max_k: usize) -> Result<(Vec<usize>, f64)> {
    let (n, p) = x.shape();
    if p > BRUTE_FORCE_MAX_P || max_k > BRUTE_FORCE_MAX_K {
        return Err(Error::TooLarge {
            p,
            max_p: BRUTE_FORCE_MAX_P,
            max_k,
            max_max_k: BRUTE_FORCE_MAX_K,
        });
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has length {}, expected {n}",
            y.len()
        )));
    }
    let yv = DVector::from_column_slice(y);
    let tie = 1e-12 * yv.norm_squared();
    let mut best = (Vec::new(), yv.norm_squared());
    let mut subset: Vec<usize> = Vec::with_capacity(max_k);
    for size in 1..=max_k.min(p) {
        subset.clear();
        subset.extend(0..size);
        loop {
            let rss = subset_rss(x, &yv, &subset);
            if rss < best.1 - tie {
                best = (subset.clone(), rss);
            }
            if !next_combination(&mut subset, p) {
                break;
            }
        }
    }
    Ok(best)
}

fn subset_rss(x: &DMatrix<f64>, y: &DVector<f64>, subset: &[usize]) -> f64 {
    let n = x.nrows();
    let xt = DMatrix::from_fn(n, subset.len(), |i, a| column(x, subset[a])[i]);
    let svd = xt.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(1.0);
    match svd.solve(y, tol) {
        Ok(b) => (y - xt * b).norm_squared(),
        Err(_) => y.norm_squared(),
    }
}

fn next_combination(c: &mut [usize], p: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < p - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Empirical versus bounded exceedance rates of the two Gaussian tail events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub trials: usize,
    pub n: usize,
    pub p: usize,
    pub a: f64,
    /// `sqrt(2 (1 + a) log p)`.
    pub max_threshold: f64,
    /// Fraction of trials with `max_j |W_j| > max_threshold` over `p` draws.
    pub max_rate: f64,
    /// `2 p / p^(1 + a)`.
    pub max_bound: f64,
    /// `sqrt(2/pi) p / (max_threshold p^(1 + a))`.
    pub max_bound_gaussian: f64,
    /// `1 + mu_n`.
    pub norm_threshold: f64,
    /// Fraction of trials with `|W| / sqrt(n) >= norm_threshold` over `n` draws.
    pub norm_rate: f64,
    /// `1 / p`.
    pub norm_bound: f64,
    pub max_ok: bool,
    pub norm_ok: bool,
}

pub fn check_tail_bounds(trials: usize, n: usize, p: usize, a: f64, seed: u64) -> Result<TailReport> {
    if trials == 0 || n == 0 || p < 2 || !(a > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "need trials >= 1, n >= 1, p >= 2, a > 0; got trials={trials}, n={n}, p={p}, a={a}"
        )));
    }
    let pf = p as f64;
    let max_threshold = tau(pf, a);
    let norm_threshold = 1.0 + mu_n(pf, n as f64);
    let (max_hits, norm_hits) = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut r = rng(derive_seed(seed, t));
            let max_hit = (0..p).any(|_| r.sample::<f64, _>(StandardNormal).abs() > max_threshold);
            let sq: f64 = (0..n).map(|_| r.sample::<f64, _>(StandardNormal).powi(2)).sum();
            (
                usize::from(max_hit),
                usize::from((sq / n as f64).sqrt() >= norm_threshold),
            )
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let max_rate = max_hits as f64 / trials as f64;
    let norm_rate = norm_hits as f64 / trials as f64;
    let max_bound = 2.0 * pf / pf.powf(1.0 + a);
    let norm_bound = 1.0 / pf;
    Ok(TailReport {
        trials,
        n,
        p,
        a,
        max_threshold,
        max_rate,
        max_bound,
        max_bound_gaussian: (2.0 / std::f64::consts::PI).sqrt() * pf / (max_threshold * pf.powf(1.0 + a)),
        norm_threshold,
        norm_rate,
        norm_bound,
        max_ok: max_rate <= max_bound,
        norm_ok: norm_rate <= norm_bound,
    })
}
