//! `cplim`: command-line harness for the simulation and estimation studies.
//!
//! Subcommands: `simulate`, `invariant`, `convergence`, `rate`, `audit`,
//! `zol`, `threshold`. Every run is reproducible from its echoed config and
//! seed; per-replication random streams are derived from `(seed, index)`, so
//! results are identical for any `--workers` count.

mod configs;
mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cplim_core::distributions::DistributionError;
use cplim_core::markov::{
    default_burn_in, mixing_diagnostic, simulate_chain, solve_invariant_density, GridSpec,
    MarkovError, MixingConfig, StateModel,
};
use cplim_core::metrics::{
    rate_study, simulate_row_sums, theoretical_rate_bound, MetricsError, RateBoundParams,
    RateStudyConfig,
};
use cplim_core::report::{config_hash, csv_body};
use cplim_core::rng::{blocks, stream_for};
use cplim_core::threshold::{estimator_asymptotics_study, AsymptoticsConfig, ThresholdError};
use cplim_core::triangular::{moment_audit, AuditConfig, TriangularError};

use configs::*;
use output::{write_file, write_json};

/// Classified failure: config problems exit 2, numerical problems exit 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) => m,
        }
    }
}

fn from_markov(e: MarkovError) -> CliError {
    use MarkovError::*;
    match e {
        UnstableDrift(_)
        | ThresholdOutOfRange { .. }
        | Unidentifiable
        | GridTooSmall(_)
        | TooFewReplications(_)
        | NoLags => CliError::Config(e.to_string()),
        MassDrift { .. } | NoConvergence { .. } | InsufficientOccupancy { .. } => {
            CliError::Numerical(e.to_string())
        }
    }
}

fn from_distribution(e: DistributionError) -> CliError {
    match e {
        DistributionError::Quadrature(_) => CliError::Numerical(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

fn from_metrics(e: MetricsError) -> CliError {
    match e {
        MetricsError::Markov(m) => from_markov(m),
        MetricsError::Distribution(d) => from_distribution(d),
        MetricsError::InvalidT(_)
        | MetricsError::BadGrid(_)
        | MetricsError::InvalidParameters(_)
        | MetricsError::BadConfig(_) => CliError::Config(e.to_string()),
    }
}

fn from_triangular(e: TriangularError) -> CliError {
    match e {
        TriangularError::Markov(m) => from_markov(m),
        TriangularError::Distribution(d) => from_distribution(d),
        TriangularError::InsufficientHits { .. } => CliError::Numerical(e.to_string()),
        TriangularError::RowTooShort(_) => CliError::Config(e.to_string()),
    }
}

fn from_threshold(e: ThresholdError) -> CliError {
    use ThresholdError::*;
    match e {
        Markov(m) => from_markov(m),
        Distribution(d) => from_distribution(d),
        SampleTooShort(_) | OutOfTheta { .. } | Unidentifiable => CliError::Config(e.to_string()),
        DegeneratePosterior | BadProcess(_) | Quadrature(_) => CliError::Numerical(e.to_string()),
    }
}

const EXIT_HELP: &str = "Exit codes:
  0  success
  2  configuration or schema error
  3  numerical failure (solver or quadrature did not converge, degenerate posterior)
  4  audit VIOLATION flag raised

Environment overrides: CPLIM_SEED (seed), CPLIM_WORKERS (worker count).
Precedence for every field: flag > environment > --config file > default.";

#[derive(Parser)]
#[command(
    name = "cplim",
    about = "Windowed autoregressive sums, their compound Poisson limits, and threshold estimation",
    after_help = EXIT_HELP,
    version
)]
struct Cli {
    /// Master seed (overrides CPLIM_SEED and the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replication-parallel studies.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (default: cplim-out).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// JSON config file; flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate chain paths (states + innovations) to CSV.
    Simulate(SimulateArgs),
    /// Solve the invariant density and report its value at the origin.
    Invariant(InvariantArgs),
    /// One-n comparison: Lévy distance of the row-sum law to its limit.
    Convergence(ConvergenceArgs),
    /// n-sweep rate study with envelope ratios and smoothing bounds.
    Rate(RateArgs),
    /// Monte Carlo audit of the moment and dependence bounds.
    Audit(AuditArgs),
    /// Evaluate the smoothing bound: closed-form or empirical.
    Zol(ZolArgs),
    /// Threshold estimation study: Bayes estimator vs the limit law.
    Threshold(ThresholdArgs),
    /// Mixing diagnostic table (heuristic).
    Mixing(MixingArgs),
}

#[derive(Args, Clone, Default)]
struct ArFlags {
    /// Innovation family: gaussian | laplace | logistic.
    #[arg(long)]
    family: Option<String>,
    /// Innovation scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Drift: zero | linear | clipped.
    #[arg(long)]
    drift: Option<String>,
    /// Drift slope (|rho| < 1).
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    /// Clip bound for the clipped drift.
    #[arg(long)]
    clip: Option<f64>,
    /// Mark transform: one | affine | log_ratio.
    #[arg(long)]
    mark: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    mark_slope: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mark_offset: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mark_shift: Option<f64>,
}

impl ArFlags {
    fn apply(&self, cfg: &mut ArModelConfig) {
        let Self {
            family,
            sigma,
            drift,
            rho,
            clip,
            mark,
            mark_slope,
            mark_offset,
            mark_shift,
        } = self.clone();
        if let Some(v) = family {
            cfg.family = v;
        }
        if let Some(v) = sigma {
            cfg.sigma = v;
        }
        if let Some(v) = drift {
            cfg.drift = v;
        }
        if let Some(v) = rho {
            cfg.rho = v;
        }
        if let Some(v) = clip {
            cfg.clip = v;
        }
        if let Some(v) = mark {
            cfg.mark = v;
        }
        if let Some(v) = mark_slope {
            cfg.mark_slope = v;
        }
        if let Some(v) = mark_offset {
            cfg.mark_offset = v;
        }
        if let Some(v) = mark_shift {
            cfg.mark_shift = v;
        }
    }
}

#[derive(Args, Clone, Default)]
struct TarFlags {
    #[arg(long)]
    tar_family: Option<String>,
    #[arg(long)]
    tar_sigma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    rho_plus: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    rho_minus: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    intercept_plus: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    intercept_minus: Option<f64>,
    /// True threshold.
    #[arg(long, allow_hyphen_values = true)]
    theta0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    theta_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    theta_max: Option<f64>,
}

impl TarFlags {
    fn apply(&self, cfg: &mut TarModelConfig) {
        let Self {
            tar_family,
            tar_sigma,
            rho_plus,
            rho_minus,
            intercept_plus,
            intercept_minus,
            theta0,
            theta_min,
            theta_max,
        } = self.clone();
        if let Some(v) = tar_family {
            cfg.family = v;
        }
        if let Some(v) = tar_sigma {
            cfg.sigma = v;
        }
        if let Some(v) = rho_plus {
            cfg.rho_plus = v;
        }
        if let Some(v) = rho_minus {
            cfg.rho_minus = v;
        }
        if let Some(v) = intercept_plus {
            cfg.intercept_plus = v;
        }
        if let Some(v) = intercept_minus {
            cfg.intercept_minus = v;
        }
        if let Some(v) = theta0 {
            cfg.theta0 = v;
        }
        if let Some(v) = theta_min {
            cfg.theta_min = v;
        }
        if let Some(v) = theta_max {
            cfg.theta_max = v;
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Model kind: ar | tar.
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    ar: ArFlags,
    #[command(flatten)]
    tar: TarFlags,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args)]
struct InvariantArgs {
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    ar: ArFlags,
    #[command(flatten)]
    tar: TarFlags,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    x_max: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    ar: ArFlags,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    t_points: Option<usize>,
}

#[derive(Args)]
struct RateArgs {
    #[command(flatten)]
    ar: ArFlags,
    /// Comma-separated strictly increasing row lengths.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    t_points: Option<usize>,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    ar: ArFlags,
    #[arg(long)]
    n: Option<usize>,
    /// Replications; defaults to the hit-count rule ceil(100 n / sup q).
    #[arg(long)]
    reps: Option<usize>,
    /// Declared dependence depth of the row.
    #[arg(long)]
    ell: Option<u32>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    t_points: Option<usize>,
}

#[derive(Args)]
struct ZolArgs {
    /// Evaluate the closed-form bound instead of the empirical one.
    #[arg(long)]
    theoretical: bool,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    c3: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    ell: Option<u32>,
    /// Inner-term coefficient: 8 (integrated display) or 2.
    #[arg(long)]
    coefficient: Option<f64>,
    #[command(flatten)]
    ar: ArFlags,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    t_points: Option<usize>,
}

#[derive(Args)]
struct ThresholdArgs {
    #[command(flatten)]
    tar: TarFlags,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Prior: uniform | truncated_gaussian.
    #[arg(long)]
    prior: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    prior_mean: Option<f64>,
    #[arg(long)]
    prior_sd: Option<f64>,
    #[arg(long)]
    u_max: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    x_max: Option<f64>,
}

#[derive(Args)]
struct MixingArgs {
    #[command(flatten)]
    ar: ArFlags,
    /// Comma-separated lags.
    #[arg(long, value_delimiter = ',')]
    lags: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
}

fn env_u64(name: &str) -> Option<u64> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn env_usize(name: &str) -> Option<usize> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn main() {
    let cli = Cli::parse();
    let workers = cli.workers.or_else(|| env_usize("CPLIM_WORKERS"));
    if let Some(w) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .ok();
    }
    let out_dir = cli
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("cplim-out"));
    let seed_override = cli.seed.or_else(|| env_u64("CPLIM_SEED"));

    let result = run(&cli, &out_dir, seed_override);
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.code());
        }
    }
}

fn run(cli: &Cli, out_dir: &Path, seed: Option<u64>) -> Result<i32, CliError> {
    match &cli.cmd {
        Cmd::Simulate(a) => run_simulate(cli, a, out_dir, seed),
        Cmd::Invariant(a) => run_invariant(cli, a, out_dir),
        Cmd::Convergence(a) => run_convergence(cli, a, out_dir, seed),
        Cmd::Rate(a) => run_rate(cli, a, out_dir, seed),
        Cmd::Audit(a) => run_audit(cli, a, out_dir, seed),
        Cmd::Zol(a) => run_zol(cli, a, out_dir, seed),
        Cmd::Threshold(a) => run_threshold(cli, a, out_dir, seed),
        Cmd::Mixing(a) => run_mixing(cli, a, out_dir, seed),
    }
}

fn run_simulate(
    cli: &Cli,
    a: &SimulateArgs,
    out: &Path,
    seed: Option<u64>,
) -> Result<i32, CliError> {
    let mut cfg: SimulateConfig = load(cli.config.as_deref())?.unwrap_or_default();
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    a.ar.apply(&mut cfg.ar);
    a.tar.apply(&mut cfg.tar);
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if a.burn_in.is_some() {
        cfg.burn_in = a.burn_in;
    }
    if let Some(v) = a.reps {
        cfg.reps = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.n == 0 {
        return Err(CliError::Config("n must be positive".into()));
    }
    let hash = config_hash(&cfg);

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut emit = |model: &dyn StateModel| {
        let burn = cfg.burn_in.unwrap_or_else(|| default_burn_in(model));
        for k in 0..cfg.reps {
            let mut rng = stream_for(cfg.seed, k as u64);
            let path = simulate_chain(model, cfg.n, burn, &mut rng);
            rows.push(vec![
                k.to_string(),
                "0".into(),
                path.states[0].to_string(),
                String::new(),
            ]);
            for j in 1..path.states.len() {
                rows.push(vec![
                    k.to_string(),
                    j.to_string(),
                    path.states[j].to_string(),
                    path.innovations[j - 1].to_string(),
                ]);
            }
        }
        burn
    };
    let burn_used = match cfg.model.as_str() {
        "ar" => emit(&cfg.ar.build()?),
        "tar" => emit(&cfg.tar.build()?),
        other => return Err(CliError::Config(format!("unknown model kind `{other}`"))),
    };

    let csv = csv_body(&hash, "rep,step,state,innovation", &rows);
    let csv_path = write_file(out, "paths.csv", &csv)?;
    let json_path = write_json(
        out,
        "simulate.json",
        &json!({
            "config_hash": hash,
            "config": cfg,
            "burn_in_used": burn_used,
        }),
    )?;
    println!(
        "simulate: {} paths of length {} -> {}, {}",
        cfg.reps,
        cfg.n,
        csv_path.display(),
        json_path.display()
    );
    Ok(0)
}

fn run_invariant(cli: &Cli, a: &InvariantArgs, out: &Path) -> Result<i32, CliError> {
    let mut cfg: InvariantConfig = load(cli.config.as_deref())?.unwrap_or_default();
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    a.ar.apply(&mut cfg.ar);
    a.tar.apply(&mut cfg.tar);
    if let Some(v) = a.grid_points {
        cfg.grid_points = v;
    }
    if a.x_max.is_some() {
        cfg.x_max = a.x_max;
    }
    if let Some(v) = a.tol {
        cfg.tol = v;
    }
    if let Some(v) = a.max_iter {
        cfg.max_iter = v;
    }
    let hash = config_hash(&cfg);

    let (density, at_threshold) = match cfg.model.as_str() {
        "ar" => {
            let model = cfg.ar.build()?;
            let d = solve_invariant_density(&model, &cfg.grid(), cfg.tol, cfg.max_iter)
                .map_err(from_markov)?;
            (d, None)
        }
        "tar" => {
            let model = cfg.tar.build()?;
            let d = solve_invariant_density(&model, &cfg.grid(), cfg.tol, cfg.max_iter)
                .map_err(from_markov)?;
            let v = d.density_at(model.threshold);
            (d, Some(v))
        }
        other => return Err(CliError::Config(format!("unknown model kind `{other}`"))),
    };

    let rows: Vec<Vec<String>> = density
        .grid
        .iter()
        .zip(&density.values)
        .map(|(x, p)| vec![x.to_string(), p.to_string()])
        .collect();
    let csv_path = write_file(out, "invariant.csv", &csv_body(&hash, "x,density", &rows))?;
    let json_path = write_json(
        out,
        "invariant.json",
        &json!({
            "config_hash": hash,
            "config": cfg,
            "p0": density.at_zero(),
            "density_at_threshold": at_threshold,
            "iterations": density.iterations,
            "residual": density.residual,
            "mass": density.mass(),
            "sup": density.sup(),
        }),
    )?;
    println!(
        "invariant: p(0) = {:.6} after {} sweeps (residual {:.3e}) -> {}, {}",
        density.at_zero(),
        density.iterations,
        density.residual,
        csv_path.display(),
        json_path.display()
    );
    Ok(0)
}

fn run_convergence(
    cli: &Cli,
    a: &ConvergenceArgs,
    out: &Path,
    seed: Option<u64>,
) -> Result<i32, CliError> {
    let mut cfg: ConvergenceConfig = load(cli.config.as_deref())?.unwrap_or_default();
    a.ar.apply(&mut cfg.ar);
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if let Some(v) = a.reps {
        cfg.reps = v;
    }
    if let Some(v) = a.bootstrap {
        cfg.bootstrap = v;
    }
    if let Some(v) = a.t_points {
        cfg.t_points = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let hash = config_hash(&cfg);
    let model = cfg.ar.build()?;

    let mut study = RateStudyConfig::new(vec![cfg.n], cfg.reps, cfg.seed);
    study.bootstrap = cfg.bootstrap;
    study.t_points = cfg.t_points;
    let report = rate_study(&model, &study).map_err(from_metrics)?;
    let row = report.rows[0];

    // the same streams rebuild the same sums for the CDF dump
    let burn = default_burn_in(&model);
    let mut sums = simulate_row_sums(&model, cfg.n, cfg.reps, cfg.seed, blocks::REPLICATION, burn);
    sums.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let m = sums.len() as f64;
    let rows: Vec<Vec<String>> = sums
        .iter()
        .enumerate()
        .map(|(i, v)| vec![v.to_string(), ((i + 1) as f64 / m).to_string()])
        .collect();
    let csv_path = write_file(
        out,
        "convergence_cdf.csv",
        &csv_body(&hash, "value,cdf", &rows),
    )?;
    let json_path = write_json(
        out,
        "convergence.json",
        &json!({
            "config_hash": hash,
            "config": cfg,
            "intensity": report.intensity,
            "mc_sigma": report.mc_sigma,
            "n": row.n,
            "reps": row.reps,
            "levy_hat": row.levy_hat,
            "levy_err": row.levy_err,
            "envelope_ratio": row.envelope_ratio,
            "zol_bound": row.zol_bound,
            "seconds": row.seconds,
        }),
    )?;
    println!(
        "convergence: n = {}, Levy = {:.5} (err {:.5}), smoothing bound {:.5} -> {}, {}",
        row.n,
        row.levy_hat,
        row.levy_err,
        row.zol_bound,
        csv_path.display(),
        json_path.display()
    );
    Ok(0)
}

fn run_rate(cli: &Cli, a: &RateArgs, out: &Path, seed: Option<u64>) -> Result<i32, CliError> {
    let mut cfg: RateConfig = load(cli.config.as_deref())?.unwrap_or_default();
    a.ar.apply(&mut cfg.ar);
    if let Some(v) = &a.n_grid {
        cfg.n_grid = v.clone();
    }
    if let Some(v) = a.reps {
        cfg.reps = v;
    }
    if let Some(v) = a.bootstrap {
        cfg.bootstrap = v;
    }
    if let Some(v) = a.t_points {
        cfg.t_points = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let hash = config_hash(&cfg);
    let model = cfg.ar.build()?;

    let mut study = RateStudyConfig::new(cfg.n_grid.clone(), cfg.reps, cfg.seed);
    study.bootstrap = cfg.bootstrap;
    study.t_points = cfg.t_points;
    let report = rate_study(&model, &study).map_err(from_metrics)?;

    let csv_path = write_file(out, "rate.csv", &report.csv(&hash))?;
    let json_path = write_json(
        out,
        "rate.json",
        &json!({
            "config_hash": hash,
            "config": cfg,
            "intensity": report.intensity,
            "mc_sigma": report.mc_sigma,
            "rows": report.rows,
        }),
    )?;
    for row in &report.rows {
        println!(
            "rate: n = {:>6}  Levy = {:.5} (err {:.5})  envelope = {:.4}  bound = {:.4}",
            row.n, row.levy_hat, row.levy_err, row.envelope_ratio, row.zol_bound
        );
    }
    println!(
        "rate: intensity = {:.6} -> {}, {}",
        report.intensity,
        csv_path.display(),
        json_path.display()
    );
    Ok(0)
}

fn run_audit(cli: &Cli, a: &AuditArgs, out: &Path, seed: Option<u64>) -> Result<i32, CliError> {
    let mut cfg: AuditCliConfig = load(cli.config.as_deref())?.unwrap_or_default();
    a.ar.apply(&mut cfg.ar);
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if a.reps.is_some() {
        cfg.reps = a.reps;
    }
    if let Some(v) = a.ell {
        cfg.ell = v;
    }
    if let Some(v) = a.t_max {
        cfg.t_max = v;
    }
    if let Some(v) = a.t_points {
        cfg.t_points = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let hash = config_hash(&cfg);
    let model = cfg.ar.build()?;

    let mut audit_cfg = AuditConfig::new(cfg.n, cfg.seed);
    audit_cfg.reps = cfg.reps;
    audit_cfg.ell = cfg.ell;
    let k = cfg.t_points.max(2);
    audit_cfg.t_grid = (0..k)
        .map(|i| -cfg.t_max + 2.0 * cfg.t_max * i as f64 / (k - 1) as f64)
        .collect();
    let audit = moment_audit(&model, &audit_cfg).map_err(from_triangular)?;

    let rows: Vec<Vec<String>> = audit
        .estimates
        .iter()
        .map(|e| {
            vec![
                e.name.clone(),
                e.value.to_string(),
                e.std_error.to_string(),
                e.bound.to_string(),
                e.violated.to_string(),
            ]
        })
        .collect();
    let csv_path = write_file(
        out,
        "audit.csv",
        &csv_body(&hash, "name,value,std_error,bound,violated", &rows),
    )?;
    let json_path = write_json(
        out,
        "audit.json",
        &json!({
            "config_hash": hash,
            "config": cfg,
            "audit": audit,
        }),
    )?;
    for e in &audit.estimates {
        println!(
            "audit: {:<18} {:>12.6} (se {:.2e})  bound {:>10.6}  {}",
            e.name,
            e.value,
            e.std_error,
            e.bound,
            if e.violated { "VIOLATION" } else { "ok" }
        );
    }
    println!(
        "audit: C1 = {:.4}, C2 = {:.4}, reps = {} -> {}, {}",
        audit.c1_implied,
        audit.c2_bound,
        audit.reps,
        csv_path.display(),
        json_path.display()
    );
    if audit.has_violation() {
        eprintln!("audit: VIOLATION in {:?}", audit.violations);
        return Ok(4);
    }
    Ok(0)
}

fn run_zol(cli: &Cli, a: &ZolArgs, out: &Path, seed: Option<u64>) -> Result<i32, CliError> {
    let mut cfg: ZolConfig = load(cli.config.as_deref())?.unwrap_or_default();
    if a.theoretical {
        cfg.theoretical = true;
    }
    macro_rules! take {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    take!(c1, c2, c3, mu, r, b, n, ell, coefficient, reps, t_points);
    a.ar.apply(&mut cfg.ar);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let hash = config_hash(&cfg);

    if cfg.theoretical {
        let params = RateBoundParams {
            c1: cfg.c1,
            c2: cfg.c2,
            c3: cfg.c3,
            mu: cfg.mu,
            r: cfg.r,
            b: cfg.b,
            ell: cfg.ell,
            coefficient: cfg.coefficient,
        };
        let value = theoretical_rate_bound(&params, cfg.n).map_err(from_metrics)?;
        let json_path = write_json(
            out,
            "zol.json",
            &json!({
                "config_hash": hash,
                "config": cfg,
                "theoretical_rate_bound": value,
            }),
        )?;
        println!("theoretical_rate_bound = {value}");
        println!("zol: -> {}", json_path.display());
        return Ok(0);
    }

    let model = cfg.ar.build()?;
    let mut study = RateStudyConfig::new(vec![cfg.n as usize], cfg.reps, cfg.seed);
    study.bootstrap = 32;
    study.t_points = cfg.t_points;
    let report = rate_study(&model, &study).map_err(from_metrics)?;
    let row = report.rows[0];
    let json_path = write_json(
        out,
        "zol.json",
        &json!({
            "config_hash": hash,
            "config": cfg,
            "intensity": report.intensity,
            "n": row.n,
            "reps": row.reps,
            "levy_hat": row.levy_hat,
            "zol_bound": row.zol_bound,
        }),
    )?;
    println!("zolotarev_bound = {}", row.zol_bound);
    println!("levy_hat = {}", row.levy_hat);
    println!("zol: -> {}", json_path.display());
    Ok(0)
}

fn run_threshold(
    cli: &Cli,
    a: &ThresholdArgs,
    out: &Path,
    seed: Option<u64>,
) -> Result<i32, CliError> {
    let mut cfg: ThresholdConfig = load(cli.config.as_deref())?.unwrap_or_default();
    a.tar.apply(&mut cfg.tar);
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if let Some(v) = a.reps {
        cfg.reps = v;
    }
    if let Some(v) = &a.prior {
        cfg.prior = v.clone();
    }
    if let Some(v) = a.prior_mean {
        cfg.prior_mean = v;
    }
    if let Some(v) = a.prior_sd {
        cfg.prior_sd = v;
    }
    if a.u_max.is_some() {
        cfg.u_max = a.u_max;
    }
    if let Some(v) = a.grid_points {
        cfg.grid_points = v;
    }
    if a.x_max.is_some() {
        cfg.x_max = a.x_max;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let hash = config_hash(&cfg);
    let model = cfg.tar.build()?;
    let prior = cfg.prior_value()?;

    let mut study = AsymptoticsConfig::new(cfg.n, cfg.reps, cfg.seed);
    study.prior = prior;
    study.u_max = cfg.u_max;
    study.grid = GridSpec {
        x_max: cfg.x_max,
        points: cfg.grid_points,
    };
    let report = estimator_asymptotics_study(&model, &study).map_err(from_threshold)?;

    let csv_path = write_file(out, "threshold_cdfs.csv", &report.cdf_csv(&hash))?;
    let json_path = write_json(
        out,
        "threshold.json",
        &json!({
            "config_hash": hash,
            "config": cfg,
            "levy_distance": report.levy_distance,
            "n": report.n,
            "M": report.reps,
            "U_max": report.u_max,
            "intensity": report.intensity,
            "seed": cfg.seed,
            "delta": report.delta,
        }),
    )?;
    println!(
        "threshold: Levy(n(est - theta0), limit) = {:.5}  intensity = {:.5}  U_max = {:.2} -> {}, {}",
        report.levy_distance,
        report.intensity,
        report.u_max,
        csv_path.display(),
        json_path.display()
    );
    Ok(0)
}

fn run_mixing(cli: &Cli, a: &MixingArgs, out: &Path, seed: Option<u64>) -> Result<i32, CliError> {
    #[derive(serde::Serialize, serde::Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct MixingCliConfig {
        ar: ArModelConfig,
        lags: Vec<usize>,
        reps: usize,
        seed: u64,
    }
    impl Default for MixingCliConfig {
        fn default() -> Self {
            Self {
                ar: ArModelConfig::default(),
                lags: vec![1, 2, 3, 5, 8],
                reps: 20_000,
                seed: 1,
            }
        }
    }
    let mut cfg: MixingCliConfig = load(cli.config.as_deref())?.unwrap_or_default();
    a.ar.apply(&mut cfg.ar);
    if let Some(v) = &a.lags {
        cfg.lags = v.clone();
    }
    if let Some(v) = a.reps {
        cfg.reps = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let hash = config_hash(&cfg);
    let model = cfg.ar.build()?;
    let diag = mixing_diagnostic(
        &model,
        &MixingConfig {
            lags: cfg.lags.clone(),
            reps: cfg.reps,
            seed: cfg.seed,
            burn_in: None,
        },
    )
    .map_err(from_markov)?;

    let rows: Vec<Vec<String>> = diag
        .rows
        .iter()
        .map(|r| {
            vec![
                r.lag.to_string(),
                r.alpha_hat.to_string(),
                r.min_cell_hits.to_string(),
            ]
        })
        .collect();
    let csv_path = write_file(
        out,
        "mixing.csv",
        &csv_body(&hash, "lag,alpha_hat,min_cell_hits", &rows),
    )?;
    let json_path = write_json(
        out,
        "mixing.json",
        &json!({ "config_hash": hash, "config": cfg, "diagnostic": diag }),
    )?;
    for r in &diag.rows {
        println!("mixing: lag {:>3}  alpha_hat = {:.5}", r.lag, r.alpha_hat);
    }
    if let Some(fit) = &diag.fit {
        println!(
            "mixing: fitted R = {:.4}, rho = {:.4} (heuristic)",
            fit.big_r, fit.rho
        );
    }
    println!("mixing: -> {}, {}", csv_path.display(), json_path.display());
    Ok(0)
}
