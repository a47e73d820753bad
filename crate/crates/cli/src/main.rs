mod config;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use omp_recover::designs::{read_matrix_csv, verify_conditions, ConditionBounds};
use omp_recover::harness::{check_tail_bounds, write_trials_csv, ExperimentReport, TailReport};
use omp_recover::theory::{GaussianRegimeParams, RegimeParams, SubGaussianRegimeParams, TheoryConstants, DELTA_STAR};
use omp_recover::Error;
use serde::Serialize;

use crate::config::SweepAxis;

const WORKERS_ENV: &str = "OMP_RECOVER_WORKERS";

#[derive(Parser, Debug)]
#[command(
    name = "omp-recover",
    version,
    about = "Support recovery by thresholded orthogonal matching pursuit"
)]
struct Cli {
    /// Worker threads for Monte Carlo trials (default: available parallelism).
    /// OMP_RECOVER_WORKERS takes precedence.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print thresholds, sample sizes and failure bounds for a parameter set.
    Plan(PlanArgs),
    /// Run the Monte Carlo experiment described by a TOML config.
    Run(RunArgs),
    /// Check the eigenvalue and noise-energy conditions on a design matrix.
    Check(CheckArgs),
    /// Estimate the Gaussian maximum and norm tail rates against their bounds.
    Tails(TailsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    #[value(alias = "sub-gaussian", alias = "sub_gaussian")]
    Subgaussian,
    Gaussian,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long, value_enum)]
    regime: RegimeArg,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    kbar: usize,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Missed-mass level; defaults to sigma^2 / ((1 + delta) kbar).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = DELTA_STAR)]
    delta: f64,
    #[arg(long)]
    lmin: Option<f64>,
    #[arg(long)]
    lmax: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Probability that the eigenvalue or noise-energy conditions fail.
    #[arg(long, default_value_t = 0.0)]
    p_econd: f64,
    #[arg(long)]
    omega0: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Sample size to evaluate at; defaults to the smallest sufficient n.
    #[arg(long)]
    n: Option<u64>,
    /// True sparsity for the failure bound; defaults to kbar.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    config: PathBuf,
    /// Overrides the output directory from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// Headerless CSV design matrix.
    matrix: PathBuf,
    /// Comma-separated 0-based column indices; defaults to every column.
    #[arg(long, value_delimiter = ',')]
    support: Option<Vec<usize>>,
    /// Headerless single-column CSV noise vector.
    #[arg(long)]
    noise: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.25)]
    lmin: f64,
    #[arg(long, default_value_t = 2.25)]
    lmax: f64,
    #[arg(long, default_value_t = 2.25)]
    lambda: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct TailsArgs {
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 256)]
    p: usize,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

/// Exit 2 for bad input, 1 for failures while running.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::ZeroResidual | Error::GramSingular { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w >= 1 => Some(w),
            _ => {
                eprintln!("error: {WORKERS_ENV} must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        },
        Err(_) => cli.workers,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        pool = pool.num_threads(w.max(1));
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| dispatch(cli.command)),
        Err(e) => Err(CliError::Runtime(format!("cannot start worker pool: {e}"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Plan(a) => cmd_plan(a),
        Command::Run(a) => cmd_run(a),
        Command::Check(a) => cmd_check(a),
        Command::Tails(a) => cmd_tails(a),
    }
}

fn need(value: Option<f64>, flag: &str) -> Result<f64, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required for this regime")))
}

fn plan_params(a: &PlanArgs) -> Result<RegimeParams, CliError> {
    Ok(match a.regime {
        RegimeArg::Subgaussian => RegimeParams::SubGaussian(SubGaussianRegimeParams {
            p: a.p,
            kbar: a.kbar,
            a: a.a,
            sigma: a.sigma,
            alpha: a.alpha,
            delta: a.delta,
            lambda_min: need(a.lmin, "lmin")?,
            lambda_max: need(a.lmax, "lmax")?,
            lambda: need(a.lambda, "lambda")?,
            p_econd: a.p_econd,
        }),
        RegimeArg::Gaussian => RegimeParams::Gaussian(GaussianRegimeParams {
            p: a.p,
            kbar: a.kbar,
            a: a.a,
            sigma: a.sigma,
            omega0: need(a.omega0, "omega0")?,
            nu: need(a.nu, "nu")?,
            eta: need(a.eta, "eta")?,
            alpha: a.alpha,
            delta: a.delta,
        }),
    })
}

#[derive(Serialize)]
struct PlanOutput {
    params: RegimeParams,
    constants: TheoryConstants,
}

/// Constants at `n` (or the smallest self-consistent theorem `n`).
pub fn plan_constants(params: &RegimeParams, n: Option<u64>, k: Option<usize>) -> Result<TheoryConstants, Error> {
    let n = match n {
        Some(n) => n,
        None => params.theorem_n()?,
    };
    params.constants(n, k.unwrap_or(params.kbar()))
}

fn cmd_plan(a: PlanArgs) -> Result<(), CliError> {
    let params = plan_params(&a)?;
    let constants = plan_constants(&params, a.n, a.k)?;
    if a.json {
        println!("{}", to_json(&PlanOutput { params, constants })?);
        return Ok(());
    }
    let c = &constants;
    let rows: [(&str, String); 21] = [
        ("n", c.n.to_string()),
        ("k", c.k.to_string()),
        ("mu_n", c.mu_n.to_string()),
        ("tau", c.tau.to_string()),
        ("tau1", c.tau1.to_string()),
        ("rho", c.rho.to_string()),
        ("lambda_min", c.lambda_min.to_string()),
        ("lambda_max", c.lambda_max.to_string()),
        ("lambda", c.lambda.to_string()),
        ("r1", c.r1.to_string()),
        ("r2", c.r2.to_string()),
        ("alpha", c.alpha.to_string()),
        ("f_delta", c.f_delta.to_string()),
        ("xi", c.xi.to_string()),
        ("n_sufficient", c.n_sufficient.to_string()),
        ("xi_bar", c.xi_bar.to_string()),
        ("r", c.r_recovery.to_string()),
        ("n_corollary", c.n_corollary.to_string()),
        ("failure_bound", c.perr_bound.to_string()),
        ("failure_bound_clamped", c.perr_bound_clamped.to_string()),
        ("oracle_c", c.oracle.c_constant.to_string()),
    ];
    for (name, value) in rows {
        println!("{name:<22}{value}");
    }
    Ok(())
}

#[derive(Serialize)]
struct RunPoint<'a> {
    sweep_value: f64,
    report: &'a ExperimentReport,
}

#[derive(Serialize)]
struct RunOutput<'a> {
    spec_version: u32,
    sweep_axis: SweepAxis,
    points: Vec<RunPoint<'a>>,
}

/// Metrics whose success rate is bounded below by `1 - P`.
const BOUNDED_METRICS: [&str; 3] = ["subset", "partial", "theorem_event"];

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| io_err(&a.config, e))?;
    let file = config::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", a.config.display())))?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let run = config::expand(&file, base).map_err(|e| CliError::Usage(format!("{}: {e}", a.config.display())))?;

    let mut reports = Vec::with_capacity(run.points.len());
    for point in &run.points {
        let report = point.experiment.resolve()?.run(None)?;
        let value = point.value.unwrap_or(report.n as f64);
        reports.push((value, report));
    }

    let out_dir = a.out_dir.unwrap_or_else(|| base.join(&run.output.dir));
    std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    let output = RunOutput {
        spec_version: config::SPEC_VERSION,
        sweep_axis: run.axis.unwrap_or(SweepAxis::N),
        points: reports
            .iter()
            .map(|(v, r)| RunPoint {
                sweep_value: *v,
                report: r,
            })
            .collect(),
    };
    let json = to_json(&output)?;
    let report_path = out_dir.join(&run.output.report);
    std::fs::write(&report_path, format!("{json}\n")).map_err(|e| io_err(&report_path, e))?;

    let trials_path = out_dir.join(&run.output.trials);
    let outcomes: Vec<_> = reports.iter().flat_map(|(_, r)| r.outcomes.iter().cloned()).collect();
    let f = std::fs::File::create(&trials_path).map_err(|e| io_err(&trials_path, e))?;
    write_trials_csv(&outcomes, std::io::BufWriter::new(f))?;

    let plot_path = out_dir.join(&run.output.plot);
    let mut w = csv::Writer::from_path(&plot_path).map_err(|e| io_err(&plot_path, e))?;
    w.write_record(["sweep_value", "metric", "rate", "bound"])
        .map_err(|e| io_err(&plot_path, e))?;
    for (value, r) in &reports {
        for (metric, rate) in r.rates.named() {
            let bound = if BOUNDED_METRICS.contains(&metric) {
                (1.0 - r.theoretical_bound).to_string()
            } else {
                String::new()
            };
            w.write_record([value.to_string(), metric.to_string(), rate.to_string(), bound])
                .map_err(|e| io_err(&plot_path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(&plot_path, e))?;

    if a.json {
        println!("{json}");
    } else {
        for (value, r) in &reports {
            println!(
                "sweep_value={value} n={} trials={} failure_rate={} exact_failure_rate={} bound={} oracle_violations={}",
                r.n, r.trials, r.empirical_failure_rate, r.exact_failure_rate, r.theoretical_bound, r.oracle_violations
            );
        }
        println!(
            "wrote {}, {}, {}",
            report_path.display(),
            trials_path.display(),
            plot_path.display()
        );
    }
    Ok(())
}

fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let m = read_matrix_csv(f).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if m.ncols() != 1 {
        return Err(CliError::Usage(format!(
            "{}: expected one column, found {}",
            path.display(),
            m.ncols()
        )));
    }
    Ok(m.iter().cloned().collect())
}

#[derive(Serialize)]
struct CheckOutput {
    n: usize,
    p: usize,
    support: Vec<usize>,
    lambda_min_hat: Option<f64>,
    lambda_max_hat: Option<f64>,
    coherence_x: f64,
    condition1_ok: bool,
    noise_energy: Option<f64>,
    condition2_ok: Option<bool>,
}

fn cmd_check(a: CheckArgs) -> Result<(), CliError> {
    let f = std::fs::File::open(&a.matrix).map_err(|e| io_err(&a.matrix, e))?;
    let x = read_matrix_csv(f).map_err(|e| CliError::Usage(format!("{}: {e}", a.matrix.display())))?;
    let (n, p) = x.shape();
    let support = a.support.unwrap_or_else(|| (0..p).collect());
    let noise = a.noise.as_deref().map(read_vector).transpose()?;
    let bounds = ConditionBounds {
        lambda_min: a.lmin,
        lambda_max: a.lmax,
        lambda: a.lambda,
    };
    let zeros = vec![0.0; n];
    let report = verify_conditions(&x, &support, noise.as_deref().unwrap_or(&zeros), a.sigma, bounds)?;
    let out = CheckOutput {
        n,
        p,
        support,
        lambda_min_hat: report.lambda_min_hat,
        lambda_max_hat: report.lambda_max_hat,
        coherence_x: report.coherence_x,
        condition1_ok: report.condition1_ok,
        noise_energy: noise.as_ref().map(|_| report.noise_energy),
        condition2_ok: noise.as_ref().map(|_| report.condition2_ok),
    };
    if a.json {
        println!("{}", to_json(&out)?);
        return Ok(());
    }
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| v.to_string());
    println!("{:<16}{}x{}", "shape", out.n, out.p);
    println!("{:<16}{:?}", "support", out.support);
    println!("{:<16}{}", "lambda_min_hat", opt(out.lambda_min_hat));
    println!("{:<16}{}", "lambda_max_hat", opt(out.lambda_max_hat));
    println!("{:<16}{}", "coherence_x", out.coherence_x);
    println!("{:<16}{}", "condition1_ok", out.condition1_ok);
    println!("{:<16}{}", "noise_energy", opt(out.noise_energy));
    println!(
        "{:<16}{}",
        "condition2_ok",
        out.condition2_ok.map_or("n/a".to_string(), |v| v.to_string())
    );
    Ok(())
}

fn cmd_tails(a: TailsArgs) -> Result<(), CliError> {
    let r: TailReport = check_tail_bounds(a.trials, a.n, a.p, a.a, a.seed)?;
    if a.json {
        println!("{}", to_json(&r)?);
        return Ok(());
    }
    println!("trials={} n={} p={} a={}", r.trials, r.n, r.p, r.a);
    println!(
        "max |W_j| > {}: rate {} bound {} (gaussian {}) {}",
        r.max_threshold,
        r.max_rate,
        r.max_bound,
        r.max_bound_gaussian,
        if r.max_ok { "ok" } else { "EXCEEDED" }
    );
    println!(
        "|W|/sqrt(n) >= {}: rate {} bound {} {}",
        r.norm_threshold,
        r.norm_rate,
        r.norm_bound,
        if r.norm_ok { "ok" } else { "EXCEEDED" }
    );
    Ok(())
}
