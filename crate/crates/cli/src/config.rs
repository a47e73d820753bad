//! Run configuration file: strict TOML mirroring `ExperimentConfig`, with
//! list values on at most one of the sweepable keys.

use std::path::{Path, PathBuf};

use omp_recover::designs::{
    CoefficientKind, CoefficientSpec, Ensemble, Magnitudes, NoiseKind, SigmaSpec, SignRule, SupportRule,
};
use omp_recover::harness::{BetaMinRule, ExperimentConfig, NRule, Sampling};
use omp_recover::theory::{GaussianRegimeParams, RegimeParams, SubGaussianRegimeParams, DELTA_STAR};
use omp_recover::SelectionRule;
use serde::{Deserialize, Serialize};

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(vs) => vs.clone(),
        }
    }

    fn is_list(&self) -> bool {
        matches!(self, OneOrMany::Many(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub spec_version: u32,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub record_traces: bool,
    #[serde(default)]
    pub selection_rule: SelectionRule,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub sampling: Sampling,
    pub theory: TheorySection,
    pub n: NSection,
    pub design: DesignSection,
    pub coefficients: CoefficientSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeName {
    SubGaussian,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    pub regime: RegimeName,
    pub p: OneOrMany<usize>,
    pub kbar: usize,
    pub a: f64,
    pub sigma: OneOrMany<f64>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub lambda: Option<f64>,
    pub p_econd: Option<f64>,
    pub omega0: Option<OneOrMany<f64>>,
    pub nu: Option<f64>,
    pub eta: Option<OneOrMany<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NRuleName {
    Explicit,
    FromTheorem,
    FromCorollary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NSection {
    pub rule: NRuleName,
    pub value: Option<OneOrMany<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleName {
    IidGaussian,
    IidRademacher,
    CorrelatedGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSection {
    Identity,
    ConstantOffDiagonal {
        c: f64,
        kbar: usize,
    },
    /// `c = omega0 / 2` and the theory's `kbar`.
    Lemma,
    /// Headerless CSV, resolved relative to the config file.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub ensemble: EnsembleName,
    pub sigma: Option<SigmaSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKindName {
    ExactSparse,
    Compressible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    pub kind: CoefficientKindName,
    pub k: OneOrMany<usize>,
    pub beta_min: Option<OneOrMany<f64>>,
    /// `beta_min = factor * r * sigma * mu_n`; exclusive with `beta_min`.
    pub beta_min_factor: Option<f64>,
    #[serde(default)]
    pub magnitudes: Magnitudes,
    pub eta: Option<f64>,
    pub nu: Option<f64>,
    #[serde(default)]
    pub sign_rule: SignRule,
    #[serde(default)]
    pub support_rule: SupportRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_report")]
    pub report: String,
    #[serde(default = "default_trials")]
    pub trials: String,
    #[serde(default = "default_plot")]
    pub plot: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from(".")
}
fn default_report() -> String {
    "report.json".into()
}
fn default_trials() -> String {
    "trials.csv".into()
}
fn default_plot() -> String {
    "plot.csv".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            report: default_report(),
            trials: default_trials(),
            plot: default_plot(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    N,
    P,
    K,
    Sigma,
    Omega0,
    Eta,
    BetaMin,
}

/// One point of a sweep with its fully resolved experiment.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// `None` for an `n` chosen by a theory rule; filled in after resolution.
    pub value: Option<f64>,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct ExpandedRun {
    pub axis: Option<SweepAxis>,
    pub points: Vec<SweepPoint>,
    pub output: OutputSection,
}

pub fn parse(text: &str) -> Result<RunFile, String> {
    let file: RunFile = toml::from_str(text).map_err(|e| e.to_string())?;
    if file.spec_version != SPEC_VERSION {
        return Err(format!(
            "unsupported spec_version {}, expected {SPEC_VERSION}",
            file.spec_version
        ));
    }
    Ok(file)
}

/// Sweep values of every axis; at most one may have more than one entry.
fn sweep_axis(file: &RunFile) -> Result<Option<SweepAxis>, String> {
    let mut lists = Vec::new();
    if file.n.value.as_ref().is_some_and(|v| v.is_list()) {
        lists.push(SweepAxis::N);
    }
    if file.theory.p.is_list() {
        lists.push(SweepAxis::P);
    }
    if file.coefficients.k.is_list() {
        lists.push(SweepAxis::K);
    }
    if file.theory.sigma.is_list() {
        lists.push(SweepAxis::Sigma);
    }
    if file.theory.omega0.as_ref().is_some_and(|v| v.is_list()) {
        lists.push(SweepAxis::Omega0);
    }
    if file.theory.eta.as_ref().is_some_and(|v| v.is_list()) {
        lists.push(SweepAxis::Eta);
    }
    if file.coefficients.beta_min.as_ref().is_some_and(|v| v.is_list()) {
        lists.push(SweepAxis::BetaMin);
    }
    match lists.as_slice() {
        [] => Ok(None),
        [axis] => Ok(Some(*axis)),
        _ => Err(format!("at most one key may hold a list, found lists for {lists:?}")),
    }
}

fn require<T>(value: Option<T>, key: &str) -> Result<T, String> {
    value.ok_or_else(|| format!("missing key `{key}`"))
}

fn scalar<T: Clone>(
    v: &OneOrMany<T>,
    axis: Option<SweepAxis>,
    this: SweepAxis,
    at: usize,
    key: &str,
) -> Result<T, String> {
    let values = v.values();
    if values.is_empty() {
        return Err(format!("`{key}` must not be an empty list"));
    }
    Ok(if axis == Some(this) {
        values[at].clone()
    } else {
        values[0].clone()
    })
}

pub fn expand(file: &RunFile, base_dir: &Path) -> Result<ExpandedRun, String> {
    let axis = sweep_axis(file)?;
    let count = match axis {
        None => 1,
        Some(SweepAxis::N) => file.n.value.as_ref().map_or(1, |v| v.values().len()),
        Some(SweepAxis::P) => file.theory.p.values().len(),
        Some(SweepAxis::K) => file.coefficients.k.values().len(),
        Some(SweepAxis::Sigma) => file.theory.sigma.values().len(),
        Some(SweepAxis::Omega0) => file.theory.omega0.as_ref().map_or(1, |v| v.values().len()),
        Some(SweepAxis::Eta) => file.theory.eta.as_ref().map_or(1, |v| v.values().len()),
        Some(SweepAxis::BetaMin) => file.coefficients.beta_min.as_ref().map_or(1, |v| v.values().len()),
    };
    if count == 0 {
        return Err("sweep list must not be empty".into());
    }
    let points = (0..count)
        .map(|i| point(file, axis, i, base_dir))
        .collect::<Result<Vec<_>, String>>()?;
    Ok(ExpandedRun {
        axis,
        points,
        output: file.output.clone(),
    })
}

fn point(file: &RunFile, axis: Option<SweepAxis>, at: usize, base_dir: &Path) -> Result<SweepPoint, String> {
    let t = &file.theory;
    let p = scalar(&t.p, axis, SweepAxis::P, at, "theory.p")?;
    let sigma = scalar(&t.sigma, axis, SweepAxis::Sigma, at, "theory.sigma")?;
    let delta = t.delta.unwrap_or(DELTA_STAR);
    let omega0 = t
        .omega0
        .as_ref()
        .map(|v| scalar(v, axis, SweepAxis::Omega0, at, "theory.omega0"))
        .transpose()?;
    let eta = t
        .eta
        .as_ref()
        .map(|v| scalar(v, axis, SweepAxis::Eta, at, "theory.eta"))
        .transpose()?;
    let theory = match t.regime {
        RegimeName::SubGaussian => {
            for (key, present) in [
                ("omega0", omega0.is_some()),
                ("nu", t.nu.is_some()),
                ("eta", eta.is_some()),
            ] {
                if present {
                    return Err(format!("`theory.{key}` is only valid for the gaussian regime"));
                }
            }
            RegimeParams::SubGaussian(SubGaussianRegimeParams {
                p,
                kbar: t.kbar,
                a: t.a,
                sigma,
                alpha: t.alpha,
                delta,
                lambda_min: require(t.lambda_min, "theory.lambda_min")?,
                lambda_max: require(t.lambda_max, "theory.lambda_max")?,
                lambda: require(t.lambda, "theory.lambda")?,
                p_econd: t.p_econd.unwrap_or(0.0),
            })
        }
        RegimeName::Gaussian => {
            for (key, present) in [
                ("lambda_min", t.lambda_min.is_some()),
                ("lambda_max", t.lambda_max.is_some()),
                ("lambda", t.lambda.is_some()),
                ("p_econd", t.p_econd.is_some()),
            ] {
                if present {
                    return Err(format!("`theory.{key}` is only valid for the sub_gaussian regime"));
                }
            }
            RegimeParams::Gaussian(GaussianRegimeParams {
                p,
                kbar: t.kbar,
                a: t.a,
                sigma,
                omega0: require(omega0, "theory.omega0")?,
                nu: require(t.nu, "theory.nu")?,
                eta: require(eta, "theory.eta")?,
                alpha: t.alpha,
                delta,
            })
        }
    };

    let n_rule = match (file.n.rule, &file.n.value) {
        (NRuleName::Explicit, Some(v)) => NRule::Explicit {
            n: scalar(v, axis, SweepAxis::N, at, "n.value")?,
        },
        (NRuleName::Explicit, None) => return Err("missing key `n.value` for rule = \"explicit\"".into()),
        (_, Some(_)) => return Err("`n.value` is only valid for rule = \"explicit\"".into()),
        (NRuleName::FromTheorem, None) => NRule::FromTheorem,
        (NRuleName::FromCorollary, None) => NRule::FromCorollary,
    };

    let ensemble = match (file.design.ensemble, &file.design.sigma) {
        (EnsembleName::IidGaussian, None) => Ensemble::IidGaussian,
        (EnsembleName::IidRademacher, None) => Ensemble::IidRademacher,
        (EnsembleName::CorrelatedGaussian, Some(s)) => Ensemble::CorrelatedGaussian {
            sigma: match s {
                SigmaSection::Identity => SigmaSpec::Identity,
                SigmaSection::ConstantOffDiagonal { c, kbar } => SigmaSpec::ConstantOffDiagonal { c: *c, kbar: *kbar },
                SigmaSection::Lemma => SigmaSpec::ConstantOffDiagonal {
                    c: require(omega0, "theory.omega0")? / 2.0,
                    kbar: t.kbar,
                },
                SigmaSection::File { path } => {
                    let full = base_dir.join(path);
                    SigmaSpec::from_csv_path(&full).map_err(|e| format!("design.sigma file {}: {e}", full.display()))?
                }
            },
        },
        (EnsembleName::CorrelatedGaussian, None) => {
            return Err("missing key `design.sigma` for ensemble = \"correlated_gaussian\"".into())
        }
        (_, Some(_)) => return Err("`design.sigma` is only valid for ensemble = \"correlated_gaussian\"".into()),
    };

    let c = &file.coefficients;
    let k = scalar(&c.k, axis, SweepAxis::K, at, "coefficients.k")?;
    let (beta_min, beta_min_rule) = match (&c.beta_min, c.beta_min_factor) {
        (Some(v), None) => (
            scalar(v, axis, SweepAxis::BetaMin, at, "coefficients.beta_min")?,
            BetaMinRule::FromSpec,
        ),
        (None, Some(factor)) => (1.0, BetaMinRule::RecoveryMultiple { factor }),
        (None, None) => {
            return Err("one of `coefficients.beta_min` or `coefficients.beta_min_factor` is required".into())
        }
        (Some(_), Some(_)) => {
            return Err("`coefficients.beta_min` and `coefficients.beta_min_factor` are mutually exclusive".into())
        }
    };
    let kind = match c.kind {
        CoefficientKindName::ExactSparse => {
            if c.eta.is_some() || c.nu.is_some() {
                return Err(
                    "`coefficients.eta` and `coefficients.nu` are only valid for kind = \"compressible\"".into(),
                );
            }
            CoefficientKind::ExactSparse {
                k,
                beta_min,
                magnitudes: c.magnitudes,
            }
        }
        CoefficientKindName::Compressible => CoefficientKind::Compressible {
            k,
            beta_min,
            eta: require(c.eta.or(eta), "coefficients.eta")?,
            nu: require(c.nu.or(t.nu), "coefficients.nu")?,
        },
    };

    let value = match axis {
        None | Some(SweepAxis::N) => match n_rule {
            NRule::Explicit { n } => Some(n as f64),
            _ => None,
        },
        Some(SweepAxis::P) => Some(p as f64),
        Some(SweepAxis::K) => Some(k as f64),
        Some(SweepAxis::Sigma) => Some(sigma),
        Some(SweepAxis::Omega0) => omega0,
        Some(SweepAxis::Eta) => eta,
        Some(SweepAxis::BetaMin) => Some(beta_min),
    };

    Ok(SweepPoint {
        value,
        experiment: ExperimentConfig {
            theory,
            ensemble,
            coefficients: CoefficientSpec {
                kind,
                sign_rule: c.sign_rule,
                support_rule: c.support_rule,
            },
            beta_min_rule,
            noise: file.noise,
            selection_rule: file.selection_rule,
            trials: file.trials,
            master_seed: file.master_seed,
            n_rule,
            record_traces: file.record_traces,
            sampling: file.sampling,
        },
    })
}
