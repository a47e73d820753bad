//! Random designs, coefficient vectors and noise, plus checks of the
//! eigenvalue and noise-energy conditions on realized draws.
//!
//! Every sampler is a pure function of its spec and a seed. Design rows are
//! drawn one at a time as `L z` with `L` the lower Cholesky factor of the
//! row covariance, so a correlated design with identity covariance
//! reproduces the i.i.d. Gaussian design for the same seed.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, RngCore};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column, dot, norm, symmetric_extremes};
use crate::omp::GramSystem;
use crate::rng::{rng, TrialRng};
use crate::theory::mu_n;

/// Tolerance on the unit diagonal of a supplied covariance.
pub const UNIT_DIAGONAL_TOLERANCE: f64 = 1e-9;

/// Tail coefficients stay this fraction below the large-set cutoff so set
/// membership is never decided by rounding.
pub const TAIL_BOUNDARY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaSpec {
    Identity,
    /// Unit diagonal, every off-diagonal entry `c / kbar`.
    ConstantOffDiagonal {
        c: f64,
        kbar: usize,
    },
    /// Row-major entries.
    Explicit {
        rows: Vec<Vec<f64>>,
    },
}

impl SigmaSpec {
    pub fn build(&self, p: usize) -> Result<DMatrix<f64>> {
        let sigma = match self {
            SigmaSpec::Identity => DMatrix::identity(p, p),
            SigmaSpec::ConstantOffDiagonal { c, kbar } => {
                if *kbar == 0 {
                    return Err(Error::InvalidSigma("kbar must be >= 1".into()));
                }
                let off = c / *kbar as f64;
                if !(off.abs() < 1.0) {
                    return Err(Error::InvalidSigma(format!("|c / kbar| = {} must be < 1", off.abs())));
                }
                DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { off })
            }
            SigmaSpec::Explicit { rows } => {
                let m = matrix_from_rows(rows)?;
                if m.nrows() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "covariance is {}x{}, expected {p}x{p}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                validate_correlation(&m)?;
                m
            }
        };
        if sigma.clone().cholesky().is_none() {
            return Err(Error::SigmaNotPd);
        }
        Ok(sigma)
    }

    /// Reads an explicit covariance from a headerless CSV file.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let m = read_matrix_csv(std::fs::File::open(path)?)?;
        validate_correlation(&m)?;
        let rows = (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect();
        Ok(SigmaSpec::Explicit { rows })
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidSigma("empty matrix".into()));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidSigma("ragged rows".into()));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn validate_correlation(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidSigma(format!(
            "matrix is {}x{}, not square",
            m.nrows(),
            m.ncols()
        )));
    }
    for i in 0..m.nrows() {
        if (m[(i, i)] - 1.0).abs() > UNIT_DIAGONAL_TOLERANCE {
            return Err(Error::InvalidSigma(format!(
                "diagonal entry {i} is {}, expected 1",
                m[(i, i)]
            )));
        }
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > UNIT_DIAGONAL_TOLERANCE {
                return Err(Error::InvalidSigma(format!("entries ({i},{j}) and ({j},{i}) differ")));
            }
        }
    }
    Ok(())
}

/// Parses a headerless numeric CSV into a dense matrix.
pub fn read_matrix_csv(reader: impl Read) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidSpec(format!("line {}: cannot parse {s:?} as a number", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::InvalidSpec(format!(
                    "line {}: expected {} fields, found {}",
                    line + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::InvalidSpec("matrix file is empty".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ensemble", rename_all = "snake_case")]
pub enum Ensemble {
    IidGaussian,
    IidRademacher,
    CorrelatedGaussian { sigma: SigmaSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub n: usize,
    pub p: usize,
    pub ensemble: Ensemble,
}

/// Lower Cholesky factor applied to each standard normal row.
#[derive(Debug, Clone)]
enum RowFactor {
    None,
    Rademacher,
    /// Every column's sub-diagonal entries are equal, so `L z` is a prefix sum.
    ColumnConstant {
        diag: Vec<f64>,
        sub: Vec<f64>,
    },
    Dense(DMatrix<f64>),
}

/// Reusable sampler for one [`DesignSpec`]; the covariance is factored once.
#[derive(Debug, Clone)]
pub struct DesignSampler {
    n: usize,
    p: usize,
    factor: RowFactor,
}

impl DesignSampler {
    pub fn new(spec: &DesignSpec) -> Result<Self> {
        if spec.n == 0 || spec.p == 0 {
            return Err(Error::InvalidSpec(format!(
                "design must be non-empty, got {}x{}",
                spec.n, spec.p
            )));
        }
        let factor = match &spec.ensemble {
            Ensemble::IidGaussian => RowFactor::None,
            Ensemble::IidRademacher => RowFactor::Rademacher,
            Ensemble::CorrelatedGaussian { sigma } => {
                let s = sigma.build(spec.p)?;
                let l = s.cholesky().ok_or(Error::SigmaNotPd)?.l();
                column_constant(&l).unwrap_or(RowFactor::Dense(l))
            }
        };
        Ok(DesignSampler {
            n: spec.n,
            p: spec.p,
            factor,
        })
    }

    pub fn sample(&self, seed: u64) -> DMatrix<f64> {
        self.sample_into(seed, Vec::new())
    }

    /// Like [`DesignSampler::sample`], reusing `storage` for the entries.
    /// Every entry is overwritten, so stale contents are harmless.
    pub fn sample_into(&self, seed: u64, mut storage: Vec<f64>) -> DMatrix<f64> {
        let (n, p) = (self.n, self.p);
        let mut rng = rng(seed);
        storage.resize(n * p, 0.0);
        let mut x = DMatrix::from_vec(n, p, storage);
        let data = x.as_mut_slice();
        match &self.factor {
            RowFactor::Rademacher => {
                let mut bits = 0u64;
                let mut left = 0u32;
                for row in 0..n {
                    for j in 0..p {
                        if left == 0 {
                            bits = rng.next_u64();
                            left = 64;
                        }
                        data[j * n + row] = if bits & 1 == 1 { 1.0 } else { -1.0 };
                        bits >>= 1;
                        left -= 1;
                    }
                }
            }
            factor => {
                let mut z = vec![0.0; p];
                let mut out = vec![0.0; p];
                for row in 0..n {
                    fill_normals(&mut rng, &mut z);
                    let values = match factor {
                        RowFactor::None => &z,
                        RowFactor::ColumnConstant { diag, sub } => {
                            let mut prefix = 0.0;
                            for i in 0..p {
                                out[i] = diag[i] * z[i] + prefix;
                                prefix += sub[i] * z[i];
                            }
                            &out
                        }
                        RowFactor::Dense(l) => {
                            for i in 0..p {
                                out[i] = (0..=i).map(|k| l[(i, k)] * z[k]).sum();
                            }
                            &out
                        }
                        RowFactor::Rademacher => unreachable!(),
                    };
                    for (j, &v) in values.iter().enumerate() {
                        data[j * n + row] = v;
                    }
                }
            }
        }
        x
    }
}

fn column_constant(l: &DMatrix<f64>) -> Option<RowFactor> {
    let p = l.nrows();
    let mut diag = Vec::with_capacity(p);
    let mut sub = Vec::with_capacity(p);
    for j in 0..p {
        diag.push(l[(j, j)]);
        let v = if j + 1 < p { l[(j + 1, j)] } else { 0.0 };
        if (j + 2..p).any(|i| l[(i, j)] != v) {
            return None;
        }
        sub.push(v);
    }
    Some(RowFactor::ColumnConstant { diag, sub })
}

fn fill_normals(rng: &mut TrialRng, buf: &mut [f64]) {
    for v in buf.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

pub fn sample_design(spec: &DesignSpec, seed: u64) -> Result<DMatrix<f64>> {
    Ok(DesignSampler::new(spec)?.sample(seed))
}

/// `X^T X`, `X^T noise` and `|noise|^2` for one Gaussian design and
/// Gaussian noise draw.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossProducts {
    pub gram: DMatrix<f64>,
    pub x_noise: Vec<f64>,
    pub noise_sq: f64,
}

impl CrossProducts {
    /// Inner products of `X` with `Y = X beta + noise`.
    pub fn system(&self, beta: &[f64], n: usize) -> Result<GramSystem> {
        let p = self.gram.nrows();
        if beta.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {}, expected p = {p}",
                beta.len()
            )));
        }
        let g_beta: Vec<f64> = (0..p).map(|i| dot(column(&self.gram, i), beta)).collect();
        let xty: Vec<f64> = g_beta.iter().zip(&self.x_noise).map(|(a, b)| a + b).collect();
        let yty = dot(beta, &g_beta) + 2.0 * dot(beta, &self.x_noise) + self.noise_sq;
        GramSystem::new(self.gram.clone(), xty, yty.max(0.0), n)
    }
}

/// Draws [`CrossProducts`] directly. The rows `(x_i, noise_i)` are i.i.d.
/// `N(0, diag(Sigma, sigma^2))`, so their cross-product matrix is Wishart
/// with `n` degrees of freedom; it is generated by the Bartlett
/// decomposition `L T T^T L^T` in `O(p^3)` work, independent of `n`.
#[derive(Debug, Clone)]
pub struct GramSampler {
    n: usize,
    p: usize,
    /// Lower factor of the augmented `(p + 1) x (p + 1)` covariance.
    factor: Option<DMatrix<f64>>,
    sigma: f64,
}

impl GramSampler {
    pub fn new(spec: &DesignSpec, sigma: f64) -> Result<Self> {
        let (n, p) = (spec.n, spec.p);
        if p == 0 || n <= p {
            return Err(Error::InvalidSpec(format!(
                "cross-product sampling needs n > p, got n = {n}, p = {p}"
            )));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidSpec(format!("sigma must be >= 0, got {sigma}")));
        }
        let factor = match &spec.ensemble {
            Ensemble::IidGaussian => None,
            Ensemble::CorrelatedGaussian { sigma: s } => {
                let l = s.build(p)?.cholesky().ok_or(Error::SigmaNotPd)?.l();
                let mut aug = DMatrix::zeros(p + 1, p + 1);
                aug.view_mut((0, 0), (p, p)).copy_from(&l);
                aug[(p, p)] = sigma;
                Some(aug)
            }
            Ensemble::IidRademacher => {
                return Err(Error::InvalidSpec(
                    "cross-product sampling needs a Gaussian design".into(),
                ))
            }
        };
        Ok(GramSampler { n, p, factor, sigma })
    }

    pub fn sample(&self, seed: u64) -> CrossProducts {
        let (n, p) = (self.n, self.p);
        let m = p + 1;
        let mut rng = rng(seed);
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            let dof = (n - i) as f64;
            t[(i, i)] = ChiSquared::new(dof).expect("dof >= 1").sample(&mut rng).sqrt();
            for j in 0..i {
                t[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let b = match &self.factor {
            Some(l) => l * t,
            None => {
                for j in 0..m {
                    t[(p, j)] *= self.sigma;
                }
                t
            }
        };
        let w = &b * b.transpose();
        CrossProducts {
            gram: w.view((0, 0), (p, p)).into_owned(),
            x_noise: (0..p).map(|i| w[(i, p)]).collect(),
            noise_sq: w[(p, p)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Magnitudes {
    #[default]
    AllEqual,
    /// Uniform on `[beta_min, 2 beta_min)`.
    UniformAboveMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignRule {
    #[default]
    Random,
    AllPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SupportRule {
    #[default]
    UniformRandom,
    FirstK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientKind {
    ExactSparse {
        k: usize,
        beta_min: f64,
        #[serde(default)]
        magnitudes: Magnitudes,
    },
    /// `k` entries of magnitude `beta_min` above `sigma nu mu_n`, plus a tail
    /// with l1 norm at most `sigma eta mu_n` and entries below the cutoff.
    Compressible { k: usize, beta_min: f64, eta: f64, nu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub kind: CoefficientKind,
    #[serde(default)]
    pub sign_rule: SignRule,
    #[serde(default)]
    pub support_rule: SupportRule,
}

impl CoefficientSpec {
    pub fn k(&self) -> usize {
        match self.kind {
            CoefficientKind::ExactSparse { k, .. } | CoefficientKind::Compressible { k, .. } => k,
        }
    }

    pub fn beta_min(&self) -> f64 {
        match self.kind {
            CoefficientKind::ExactSparse { beta_min, .. } | CoefficientKind::Compressible { beta_min, .. } => beta_min,
        }
    }

    pub fn with_beta_min(mut self, value: f64) -> Self {
        match &mut self.kind {
            CoefficientKind::ExactSparse { beta_min, .. } | CoefficientKind::Compressible { beta_min, .. } => {
                *beta_min = value
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientDraw {
    pub beta: Vec<f64>,
    /// Ground-truth large set, ascending.
    pub s_set: Vec<usize>,
}

pub fn sample_coefficients(
    spec: &CoefficientSpec,
    p: usize,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<CoefficientDraw> {
    let k = spec.k();
    if k > p {
        return Err(Error::InvalidSpec(format!("k = {k} exceeds p = {p}")));
    }
    let beta_min = spec.beta_min();
    if k > 0 && !(beta_min > 0.0 && beta_min.is_finite()) {
        return Err(Error::InvalidSpec(format!("beta_min must be positive, got {beta_min}")));
    }
    // tail layout: (entry count, per-entry magnitude, remainder magnitude)
    let (tail_count, tail_value, tail_rest) = match spec.kind {
        CoefficientKind::ExactSparse { .. } => (0, 0.0, 0.0),
        CoefficientKind::Compressible { eta, nu, .. } => {
            if !(eta >= 0.0) || !(nu >= 0.0) {
                return Err(Error::InvalidSpec("eta and nu must be >= 0".into()));
            }
            let cutoff = sigma * nu * mu_n(p as f64, n as f64);
            if k > 0 && !(beta_min > cutoff) {
                return Err(Error::InvalidSpec(format!(
                    "beta_min = {beta_min} must exceed the large-set cutoff sigma*nu*mu_n = {cutoff}"
                )));
            }
            if eta == 0.0 || sigma == 0.0 {
                (0, 0.0, 0.0)
            } else if nu == 0.0 {
                return Err(Error::InfeasibleTail {
                    needed: usize::MAX,
                    available: p - k,
                });
            } else {
                let ratio = eta / nu;
                let full = ratio.floor() as usize;
                let value = cutoff * (1.0 - TAIL_BOUNDARY_MARGIN);
                let rest = (ratio - full as f64) * value;
                let needed = full + usize::from(rest > 0.0);
                if needed > p - k {
                    return Err(Error::InfeasibleTail {
                        needed,
                        available: p - k,
                    });
                }
                (full, value, rest)
            }
        }
    };
    let tail_total = tail_count + usize::from(tail_rest > 0.0);

    let mut rng = rng(seed);
    let positions: Vec<usize> = match spec.support_rule {
        SupportRule::FirstK => (0..k + tail_total).collect(),
        SupportRule::UniformRandom => index::sample(&mut rng, p, k + tail_total).into_vec(),
    };
    let mut beta = vec![0.0; p];
    let sign = |rng: &mut TrialRng| match spec.sign_rule {
        SignRule::AllPositive => 1.0,
        SignRule::Random => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
    };
    for &j in &positions[..k] {
        let magnitude = match spec.kind {
            CoefficientKind::ExactSparse {
                magnitudes: Magnitudes::UniformAboveMin,
                ..
            } => beta_min * (1.0 + rng.random::<f64>()),
            _ => beta_min,
        };
        beta[j] = sign(&mut rng) * magnitude;
    }
    for (t, &j) in positions[k..].iter().enumerate() {
        let magnitude = if t < tail_count { tail_value } else { tail_rest };
        beta[j] = sign(&mut rng) * magnitude;
    }
    let mut s_set = positions[..k].to_vec();
    s_set.sort_unstable();
    Ok(CoefficientDraw { beta, s_set })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// `sigma` times independent random signs.
    Rademacher,
}

pub fn sample_noise(n: usize, sigma: f64, kind: NoiseKind, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidSpec(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut rng = rng(seed);
    let noise = match kind {
        NoiseKind::Gaussian => (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect(),
        NoiseKind::Rademacher => (0..n)
            .map(|_| if rng.random::<bool>() { sigma } else { -sigma })
            .collect(),
    };
    Ok(noise)
}

/// Eigenvalue band and noise-energy constant to compare a draw against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Smallest eigenvalue of `X_S^T X_S / n`; `None` for an empty support.
    pub lambda_min_hat: Option<f64>,
    pub lambda_max_hat: Option<f64>,
    /// `|noise|^2 / (n sigma^2)`.
    pub noise_energy: f64,
    /// Largest absolute correlation between distinct columns, each column
    /// scaled to `|X_j|^2 = n`.
    pub coherence_x: f64,
    pub condition1_ok: bool,
    pub condition2_ok: bool,
}

pub fn verify_conditions(
    x: &DMatrix<f64>,
    support: &[usize],
    noise: &[f64],
    sigma: f64,
    bounds: ConditionBounds,
) -> Result<ConditionReport> {
    let (n, p) = x.shape();
    if let Some(&bad) = support.iter().find(|&&j| j >= p) {
        return Err(Error::DimensionMismatch(format!(
            "support index {bad} out of range for p = {p}"
        )));
    }
    if noise.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "noise has length {}, expected {n}",
            noise.len()
        )));
    }
    let (lambda_min_hat, lambda_max_hat) = if support.is_empty() {
        (None, None)
    } else {
        let (lo, hi) = symmetric_extremes(support_gram(x, support));
        (Some(lo), Some(hi))
    };
    let energy = dot(noise, noise);
    let noise_energy = if energy == 0.0 {
        0.0
    } else {
        energy / (n as f64 * sigma * sigma)
    };
    let condition1_ok = match (lambda_min_hat, lambda_max_hat) {
        (Some(lo), Some(hi)) => lo >= bounds.lambda_min && hi <= bounds.lambda_max,
        _ => true,
    };
    Ok(ConditionReport {
        lambda_min_hat,
        lambda_max_hat,
        noise_energy,
        coherence_x: coherence_x(x),
        condition1_ok,
        condition2_ok: noise_energy <= bounds.lambda,
    })
}

/// `X_S^T X_S / n`.
pub fn support_gram(x: &DMatrix<f64>, support: &[usize]) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let k = support.len();
    DMatrix::from_fn(k, k, |a, b| dot(column(x, support[a]), column(x, support[b])) / n)
}

/// Mutual coherence of `X` after scaling each column to `|X_j|^2 = n`.
/// Zero columns are ignored.
pub fn coherence_x(x: &DMatrix<f64>) -> f64 {
    let p = x.ncols();
    let norms: Vec<f64> = (0..p).map(|j| norm(column(x, j))).collect();
    let mut worst = 0.0_f64;
    for j in 0..p {
        if norms[j] == 0.0 {
            continue;
        }
        for k in j + 1..p {
            if norms[k] == 0.0 {
                continue;
            }
            let c = dot(column(x, j), column(x, k)).abs() / (norms[j] * norms[k]);
            worst = worst.max(c);
        }
    }
    worst
}

/// Largest absolute off-diagonal entry.
pub fn coherence_sigma(sigma: &DMatrix<f64>) -> f64 {
    let p = sigma.nrows();
    let mut worst = 0.0_f64;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                worst = worst.max(sigma[(i, j)].abs());
            }
        }
    }
    worst
}
