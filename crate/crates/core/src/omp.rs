//! Orthogonal matching pursuit with a normalized-residual stopping rule.
//!
//! At step `i` every undetected column `j` is scored by
//! `z_ij = X_j . R_{i-1} / |R_{i-1}|`. If the largest `|z_ij|` exceeds the
//! threshold the maximizing column joins the detected set and `Y` is
//! re-projected onto the span of all detected columns; otherwise the run
//! stops. Least-squares refits reuse a Cholesky factor of the detected
//! columns' Gram matrix that grows by one row per added column.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column, dot, norm};

/// One draw of `Y = X beta + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionInstance {
    x_matrix: DMatrix<f64>,
    beta: Vec<f64>,
    noise: Vec<f64>,
    response: Vec<f64>,
    sigma: f64,
}

impl RegressionInstance {
    pub fn new(x_matrix: DMatrix<f64>, beta: Vec<f64>, noise: Vec<f64>, sigma: f64) -> Result<Self> {
        let (n, p) = x_matrix.shape();
        if n == 0 || p == 0 {
            return Err(Error::DimensionMismatch(format!(
                "design must be non-empty, got {n}x{p}"
            )));
        }
        if beta.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {}, expected p = {p}",
                beta.len()
            )));
        }
        if noise.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "noise has length {}, expected n = {n}",
                noise.len()
            )));
        }
        if !(sigma >= 0.0) {
            return Err(Error::InvalidSpec(format!("sigma must be >= 0, got {sigma}")));
        }
        let mut response = noise.clone();
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (y, &x) in response.iter_mut().zip(column(&x_matrix, j)) {
                    *y += b * x;
                }
            }
        }
        Ok(RegressionInstance {
            x_matrix,
            beta,
            noise,
            response,
            sigma,
        })
    }

    pub fn x_matrix(&self) -> &DMatrix<f64> {
        &self.x_matrix
    }

    pub fn into_x_matrix(self) -> DMatrix<f64> {
        self.x_matrix
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n(&self) -> usize {
        self.x_matrix.nrows()
    }

    pub fn p(&self) -> usize {
        self.x_matrix.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// One column per step: the largest `|z|`, lowest index on ties.
    #[default]
    ArgmaxSingle,
    /// Every column with `|z|` above the threshold. Only analysed for
    /// i.i.d. designs.
    HardThresholdAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmpConfig {
    pub threshold: f64,
    /// Defaults to `min(n, p)`.
    pub max_steps: Option<usize>,
    pub selection_rule: SelectionRule,
    /// A new column is rejected when its Schur-complement pivot falls to
    /// this fraction of the leading Gram pivot.
    pub singular_tolerance: f64,
    /// The residual counts as zero once `|R| <= zero_residual_tolerance * |Y|`.
    pub zero_residual_tolerance: f64,
}

pub const DEFAULT_SINGULAR_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_ZERO_RESIDUAL_TOLERANCE: f64 = 1e-12;

impl OmpConfig {
    pub fn new(threshold: f64) -> Self {
        OmpConfig {
            threshold,
            max_steps: None,
            selection_rule: SelectionRule::ArgmaxSingle,
            singular_tolerance: DEFAULT_SINGULAR_TOLERANCE,
            zero_residual_tolerance: DEFAULT_ZERO_RESIDUAL_TOLERANCE,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = Some(max_steps);
        self
    }

    pub fn with_rule(mut self, rule: SelectionRule) -> Self {
        self.selection_rule = rule;
        self
    }

    fn resolve_max_steps(&self, n: usize, p: usize) -> Result<usize> {
        let cap = n.min(p);
        match self.max_steps {
            None => Ok(cap),
            Some(m) if m >= 1 && m <= cap => Ok(m),
            Some(m) => Err(Error::DimensionMismatch(format!(
                "max_steps = {m} must lie in [1, min(n, p) = {cap}]"
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        if !(self.singular_tolerance > 0.0) || !(self.zero_residual_tolerance >= 0.0) {
            return Err(Error::InvalidSpec("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ThresholdNotExceeded,
    MaxStepsReached,
    ResidualZero,
    GramSingular,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::ThresholdNotExceeded => "threshold_not_exceeded",
            StopReason::MaxStepsReached => "max_steps_reached",
            StopReason::ResidualZero => "residual_zero",
            StopReason::GramSingular => "gram_singular",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub step_index: usize,
    /// Columns scored at this step, ascending.
    pub candidates: Vec<usize>,
    /// `z_ij` for each entry of `candidates`.
    pub statistics: Vec<f64>,
    pub selected: Vec<usize>,
    pub residual_norm_before: f64,
    pub max_statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmpTrace {
    pub steps: Vec<StepRecord>,
    /// Detected columns in order of detection.
    pub detected: Vec<usize>,
    pub stop_reason: StopReason,
    /// Least-squares coefficients on `detected`, zero elsewhere.
    pub beta_hat: Vec<f64>,
    pub residual_final: Vec<f64>,
    /// Column whose addition would have made the Gram matrix singular.
    pub rejected: Option<usize>,
}

impl OmpTrace {
    /// Detected set in ascending order.
    pub fn support(&self) -> Vec<usize> {
        let mut s = self.detected.clone();
        s.sort_unstable();
        s
    }

    /// Steps that added at least one column.
    pub fn selecting_steps(&self) -> usize {
        self.steps.iter().filter(|s| !s.selected.is_empty()).count()
    }
}

/// `z_j = X_j . residual / |residual|` for every `j` in `candidates`.
pub fn compute_statistics(x: &DMatrix<f64>, residual: &[f64], candidates: &[usize]) -> Result<Vec<f64>> {
    if residual.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "residual has length {}, expected {}",
            residual.len(),
            x.nrows()
        )));
    }
    let r_norm = norm(residual);
    if r_norm == 0.0 {
        return Err(Error::ZeroResidual);
    }
    Ok(scores(x, residual, r_norm, candidates))
}

fn scores(x: &DMatrix<f64>, residual: &[f64], r_norm: f64, candidates: &[usize]) -> Vec<f64> {
    candidates
        .iter()
        .map(|&j| dot(column(x, j), residual) / r_norm)
        .collect()
}

/// Chooses the columns to add from scores over `candidates` (ascending).
/// An empty result means the stopping rule fired.
pub fn select_indices(statistics: &[f64], candidates: &[usize], threshold: f64, rule: SelectionRule) -> Vec<usize> {
    debug_assert_eq!(statistics.len(), candidates.len());
    match rule {
        SelectionRule::ArgmaxSingle => {
            let mut best: Option<(usize, f64)> = None;
            for (&j, &z) in candidates.iter().zip(statistics) {
                let a = z.abs();
                let better = match best {
                    None => true,
                    Some((bj, bz)) => a > bz || (a == bz && j < bj),
                };
                if better {
                    best = Some((j, a));
                }
            }
            match best {
                Some((j, a)) if a > threshold => vec![j],
                _ => Vec::new(),
            }
        }
        SelectionRule::HardThresholdAll => {
            let mut out: Vec<usize> = candidates
                .iter()
                .zip(statistics)
                .filter(|(_, z)| z.abs() > threshold)
                .map(|(&j, _)| j)
                .collect();
            out.sort_unstable();
            out
        }
    }
}

/// Lower Cholesky factor of `X_d^T X_d` for the detected columns `d`,
/// stored row by row, together with `X_d^T Y`.
#[derive(Debug, Clone, Default)]
pub struct GramCholesky {
    columns: Vec<usize>,
    rows: Vec<Vec<f64>>,
    xty: Vec<f64>,
    leading_pivot: f64,
}

impl GramCholesky {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Appends column `j`. O(n |d| + |d|^2).
    pub fn push(&mut self, x: &DMatrix<f64>, y: &[f64], j: usize, singular_tolerance: f64) -> Result<()> {
        let xj = column(x, j);
        let cross: Vec<f64> = self.columns.iter().map(|&c| dot(column(x, c), xj)).collect();
        self.push_entries(j, &cross, dot(xj, xj), dot(xj, y), singular_tolerance)
    }

    /// Appends column `j` given its inner products with the current columns,
    /// its squared norm and its inner product with `Y`.
    pub fn push_entries(
        &mut self,
        j: usize,
        cross: &[f64],
        sq_norm: f64,
        xty: f64,
        singular_tolerance: f64,
    ) -> Result<()> {
        debug_assert_eq!(cross.len(), self.columns.len());
        let w = self.forward(cross);
        let pivot = sq_norm - w.iter().map(|v| v * v).sum::<f64>();
        let reference = if self.columns.is_empty() {
            sq_norm
        } else {
            self.leading_pivot
        };
        let floor = singular_tolerance * reference;
        if !(pivot > floor) || sq_norm == 0.0 {
            return Err(Error::GramSingular {
                column: j,
                pivot,
                floor,
            });
        }
        if self.columns.is_empty() {
            self.leading_pivot = pivot;
        }
        let mut row = w;
        row.push(pivot.sqrt());
        self.rows.push(row);
        self.columns.push(j);
        self.xty.push(xty);
        Ok(())
    }

    /// Solves `L v = b`.
    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(b.len() + 1);
        for (i, row) in self.rows.iter().enumerate() {
            let s: f64 = row[..i].iter().zip(&v).map(|(l, vk)| l * vk).sum();
            v.push((b[i] - s) / row[i]);
        }
        v
    }

    /// Least-squares coefficients for the current columns, in push order.
    pub fn solve(&self) -> Vec<f64> {
        let mut v = self.forward(&self.xty);
        // back substitution with L^T
        for i in (0..v.len()).rev() {
            let mut s = v[i];
            for k in i + 1..v.len() {
                s -= self.rows[k][i] * v[k];
            }
            v[i] = s / self.rows[i][i];
        }
        v
    }
}

/// Solver state carried between steps.
#[derive(Debug, Clone)]
pub struct FitState {
    gram: GramCholesky,
    coefficients: Vec<f64>,
    residual: Vec<f64>,
}

impl FitState {
    pub fn new(y: &[f64]) -> Self {
        FitState {
            gram: GramCholesky::new(),
            coefficients: Vec::new(),
            residual: y.to_vec(),
        }
    }

    pub fn detected(&self) -> &[usize] {
        self.gram.columns()
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    /// Coefficients aligned with [`FitState::detected`].
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Adds `new_indices` in order and re-projects. On `GramSingular` the
    /// columns added before the offending one are kept and the fit reflects them.
    pub fn update(
        &mut self,
        x: &DMatrix<f64>,
        y: &[f64],
        new_indices: &[usize],
        singular_tolerance: f64,
    ) -> Result<()> {
        let mut outcome = Ok(());
        for &j in new_indices {
            if let Err(e) = self.gram.push(x, y, j, singular_tolerance) {
                outcome = Err(e);
                break;
            }
        }
        self.refit(x, y);
        outcome
    }

    fn refit(&mut self, x: &DMatrix<f64>, y: &[f64]) {
        self.coefficients = self.gram.solve();
        self.residual.clear();
        self.residual.extend_from_slice(y);
        for (&j, &b) in self.gram.columns().iter().zip(&self.coefficients) {
            for (r, &xv) in self.residual.iter_mut().zip(column(x, j)) {
                *r -= b * xv;
            }
        }
    }

    pub fn beta_hat(&self, p: usize) -> Vec<f64> {
        let mut beta = vec![0.0; p];
        for (&j, &b) in self.gram.columns().iter().zip(&self.coefficients) {
            beta[j] = b;
        }
        beta
    }
}

/// What the selection loop needs from a least-squares backend.
trait Fitter {
    fn detected(&self) -> &[usize];
    fn residual_norm(&self) -> f64;
    fn scores(&self, r_norm: f64, candidates: &[usize]) -> Vec<f64>;
    fn update(&mut self, new_indices: &[usize], singular_tolerance: f64) -> Result<()>;
    fn beta_hat(&self, p: usize) -> Vec<f64>;
    fn residual_final(&self) -> Vec<f64>;
}

struct DesignFitter<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    state: FitState,
}

impl Fitter for DesignFitter<'_> {
    fn detected(&self) -> &[usize] {
        self.state.detected()
    }

    fn residual_norm(&self) -> f64 {
        norm(self.state.residual())
    }

    fn scores(&self, r_norm: f64, candidates: &[usize]) -> Vec<f64> {
        scores(self.x, self.state.residual(), r_norm, candidates)
    }

    fn update(&mut self, new_indices: &[usize], singular_tolerance: f64) -> Result<()> {
        self.state.update(self.x, self.y, new_indices, singular_tolerance)
    }

    fn beta_hat(&self, p: usize) -> Vec<f64> {
        self.state.beta_hat(p)
    }

    fn residual_final(&self) -> Vec<f64> {
        self.state.residual().to_vec()
    }
}

/// Relative accuracy of `|R|` when it is recovered from `Y^T Y - Y^T P Y`;
/// residuals below this fraction of `|Y|` are treated as zero in the Gram form.
pub const GRAM_RESIDUAL_FLOOR: f64 = 1e-7;

/// The inner products OMP depends on: `X^T X`, `X^T Y` and `Y^T Y`. Every
/// statistic, refit and residual norm is a function of these alone.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSystem {
    gram: DMatrix<f64>,
    xty: Vec<f64>,
    yty: f64,
    n: usize,
}

impl GramSystem {
    /// `n` is the number of rows the inner products were summed over.
    pub fn new(gram: DMatrix<f64>, xty: Vec<f64>, yty: f64, n: usize) -> Result<Self> {
        let p = gram.nrows();
        if p == 0 || gram.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "gram matrix must be square, got {}x{}",
                p,
                gram.ncols()
            )));
        }
        if xty.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "X^T Y has length {}, expected {p}",
                xty.len()
            )));
        }
        if n == 0 || !(yty >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "need n >= 1 and Y^T Y >= 0, got n = {n}, Y^T Y = {yty}"
            )));
        }
        Ok(GramSystem { gram, xty, yty, n })
    }

    pub fn from_design(x: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but response has length {}",
                x.nrows(),
                y.len()
            )));
        }
        let p = x.ncols();
        let gram = DMatrix::from_fn(p, p, |a, b| dot(column(x, a), column(x, b)));
        let xty = (0..p).map(|j| dot(column(x, j), y)).collect();
        GramSystem::new(gram, xty, dot(y, y), x.nrows())
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn xty(&self) -> &[f64] {
        &self.xty
    }

    pub fn yty(&self) -> f64 {
        self.yty
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.gram.nrows()
    }
}

struct GramFitter<'a> {
    system: &'a GramSystem,
    chol: GramCholesky,
    coefficients: Vec<f64>,
}

impl Fitter for GramFitter<'_> {
    fn detected(&self) -> &[usize] {
        self.chol.columns()
    }

    fn residual_norm(&self) -> f64 {
        // |R|^2 = Y^T Y - b^T X_d^T Y for the least-squares coefficients b
        let explained: f64 = self
            .chol
            .columns()
            .iter()
            .zip(&self.coefficients)
            .map(|(&j, b)| b * self.system.xty[j])
            .sum();
        (self.system.yty - explained).max(0.0).sqrt()
    }

    fn scores(&self, r_norm: f64, candidates: &[usize]) -> Vec<f64> {
        let g = &self.system.gram;
        candidates
            .iter()
            .map(|&j| {
                let fitted: f64 = self
                    .chol
                    .columns()
                    .iter()
                    .zip(&self.coefficients)
                    .map(|(&d, b)| g[(j, d)] * b)
                    .sum();
                (self.system.xty[j] - fitted) / r_norm
            })
            .collect()
    }

    fn update(&mut self, new_indices: &[usize], singular_tolerance: f64) -> Result<()> {
        let g = &self.system.gram;
        let mut outcome = Ok(());
        for &j in new_indices {
            let cross: Vec<f64> = self.chol.columns().iter().map(|&d| g[(d, j)]).collect();
            if let Err(e) = self
                .chol
                .push_entries(j, &cross, g[(j, j)], self.system.xty[j], singular_tolerance)
            {
                outcome = Err(e);
                break;
            }
        }
        self.coefficients = self.chol.solve();
        outcome
    }

    fn beta_hat(&self, p: usize) -> Vec<f64> {
        let mut beta = vec![0.0; p];
        for (&j, &b) in self.chol.columns().iter().zip(&self.coefficients) {
            beta[j] = b;
        }
        beta
    }

    fn residual_final(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Extends the fit by `new_indices` and returns the new residual
/// `(I - P) Y` for the enlarged detected set.
pub fn update_fit<'a>(
    instance: &RegressionInstance,
    state: &'a mut FitState,
    new_indices: &[usize],
    singular_tolerance: f64,
) -> Result<&'a [f64]> {
    state.update(
        instance.x_matrix(),
        instance.response(),
        new_indices,
        singular_tolerance,
    )?;
    Ok(state.residual())
}

/// Least-squares fit of `Y` on the columns in `support`, embedded in a
/// length-`p` vector.
pub fn least_squares_on_support(
    instance: &RegressionInstance,
    support: &[usize],
    singular_tolerance: f64,
) -> Result<Vec<f64>> {
    let p = instance.p();
    if let Some(&bad) = support.iter().find(|&&j| j >= p) {
        return Err(Error::DimensionMismatch(format!(
            "support index {bad} out of range for p = {p}"
        )));
    }
    let mut state = FitState::new(instance.response());
    state.update(instance.x_matrix(), instance.response(), support, singular_tolerance)?;
    Ok(state.beta_hat(p))
}

pub fn run_omp(instance: &RegressionInstance, config: &OmpConfig) -> Result<OmpTrace> {
    run_omp_on(instance.x_matrix(), instance.response(), config)
}

/// [`run_omp`] on a bare `(X, Y)` pair.
pub fn run_omp_on(x: &DMatrix<f64>, y: &[f64], config: &OmpConfig) -> Result<OmpTrace> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 || y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design is {n}x{p} but response has length {}",
            y.len()
        )));
    }
    let fitter = DesignFitter {
        x,
        y,
        state: FitState::new(y),
    };
    let zero_floor = config.zero_residual_tolerance * norm(y);
    drive(fitter, n, p, zero_floor, config)
}

/// [`run_omp`] from inner products only. The trace is the same as on the
/// underlying design up to rounding, except that `residual_final` is empty
/// and residuals below `GRAM_RESIDUAL_FLOOR |Y|` count as zero.
pub fn run_omp_gram(system: &GramSystem, config: &OmpConfig) -> Result<OmpTrace> {
    let fitter = GramFitter {
        system,
        chol: GramCholesky::new(),
        coefficients: Vec::new(),
    };
    let tolerance = config.zero_residual_tolerance.max(GRAM_RESIDUAL_FLOOR);
    let zero_floor = tolerance * system.yty.sqrt();
    drive(fitter, system.n, system.p(), zero_floor, config)
}

fn drive<F: Fitter>(mut fitter: F, n: usize, p: usize, zero_floor: f64, config: &OmpConfig) -> Result<OmpTrace> {
    config.validate()?;
    let max_steps = config.resolve_max_steps(n, p)?;

    let mut is_detected = vec![false; p];
    let mut steps = Vec::new();
    let mut rejected = None;
    let mut selecting = 0usize;

    let stop_reason = loop {
        if selecting == max_steps {
            break StopReason::MaxStepsReached;
        }
        let r_norm = fitter.residual_norm();
        if r_norm <= zero_floor || r_norm == 0.0 {
            break StopReason::ResidualZero;
        }
        let candidates: Vec<usize> = (0..p).filter(|&j| !is_detected[j]).collect();
        if candidates.is_empty() {
            break StopReason::MaxStepsReached;
        }
        let statistics = fitter.scores(r_norm, &candidates);
        let max_statistic = statistics.iter().fold(0.0_f64, |m, z| m.max(z.abs()));
        let chosen = select_indices(&statistics, &candidates, config.threshold, config.selection_rule);
        let before = fitter.detected().len();
        let outcome = if chosen.is_empty() {
            Ok(())
        } else {
            fitter.update(&chosen, config.singular_tolerance)
        };
        let accepted = fitter.detected()[before..].to_vec();
        for &j in &accepted {
            is_detected[j] = true;
        }
        steps.push(StepRecord {
            step_index: steps.len() + 1,
            candidates,
            statistics,
            selected: accepted,
            residual_norm_before: r_norm,
            max_statistic,
        });
        match outcome {
            Err(Error::GramSingular { column, .. }) => {
                rejected = Some(column);
                break StopReason::GramSingular;
            }
            Err(e) => return Err(e),
            Ok(()) => {}
        }
        if chosen.is_empty() {
            break StopReason::ThresholdNotExceeded;
        }
        selecting += 1;
    };

    Ok(OmpTrace {
        steps,
        detected: fitter.detected().to_vec(),
        stop_reason,
        beta_hat: fitter.beta_hat(p),
        residual_final: fitter.residual_final(),
        rejected,
    })
}
