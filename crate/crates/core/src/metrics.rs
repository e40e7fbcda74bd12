//! Lévy distance, empirical characteristic functions, the smoothing bound,
//! the closed-form rate bound, and the n-sweep rate study.
//!
//! The Lévy distance between CDFs `F`, `G` is the infimal `h` with
//! `G(x-h) - h <= F(x) <= G(x+h) + h` for all `x`. For step CDFs the
//! sandwich can only fail at breakpoints of `F` or at breakpoints of `G`
//! shifted by `±h`, evaluating both one-sided limits at jumps; feasibility is
//! monotone in `h`, so a bisection to `tol` is exact up to `tol`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{poisson_cdf, CompoundPoissonLaw, DistributionError, MarkTransform};
use crate::markov::{
    default_burn_in, simulate_chain, solve_invariant_density, ArModel, GridSpec, MarkovError,
};
use crate::report::csv_body;
use crate::rng::{blocks, stream_for};
use crate::triangular::{build_row, Window};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("the smoothing bound requires T > 1.3, got {0}")]
    InvalidT(f64),
    #[error("bad characteristic-function grid: {0}")]
    BadGrid(String),
    #[error("invalid rate-bound parameters: {0}")]
    InvalidParameters(String),
    #[error("bad study configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// A CDF that can be evaluated with both one-sided limits and can list its
/// jump locations.
pub trait CdfLaw {
    /// Right-continuous value `F(x)`.
    fn cdf(&self, x: f64) -> f64;
    /// Left limit `F(x^-)`.
    fn cdf_left(&self, x: f64) -> f64;
    /// Sorted jump locations.
    fn breakpoints(&self) -> Vec<f64>;
}

/// Sorted i.i.d. sample defining the step CDF `F(x) = #{v_i <= x} / M`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw {
    values: Vec<f64>,
}

impl EmpiricalLaw {
    pub fn from_samples(mut values: Vec<f64>) -> Self {
        assert!(
            !values.is_empty(),
            "empirical law needs at least one sample"
        );
        assert!(
            values.iter().all(|v| v.is_finite()),
            "samples must be finite"
        );
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl CdfLaw for EmpiricalLaw {
    fn cdf(&self, x: f64) -> f64 {
        let k = self.values.partition_point(|v| *v <= x);
        k as f64 / self.values.len() as f64
    }

    fn cdf_left(&self, x: f64) -> f64 {
        let k = self.values.partition_point(|v| *v < x);
        k as f64 / self.values.len() as f64
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.values.clone();
        b.dedup();
        b
    }
}

/// Exact Poisson CDF provider (the limit law for unit jumps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonLaw {
    pub mu: f64,
}

impl PoissonLaw {
    fn support_top(&self) -> u64 {
        (self.mu + 20.0 * self.mu.sqrt() + 30.0).ceil() as u64
    }
}

impl CdfLaw for PoissonLaw {
    fn cdf(&self, x: f64) -> f64 {
        poisson_cdf(self.mu, x)
    }

    fn cdf_left(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let cut = if x.fract() == 0.0 { x - 1.0 } else { x.floor() };
        poisson_cdf(self.mu, cut)
    }

    fn breakpoints(&self) -> Vec<f64> {
        (0..=self.support_top()).map(|k| k as f64).collect()
    }
}

/// Degenerate law sitting at a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMassLaw {
    pub at: f64,
}

impl CdfLaw for PointMassLaw {
    fn cdf(&self, x: f64) -> f64 {
        if x >= self.at {
            1.0
        } else {
            0.0
        }
    }

    fn cdf_left(&self, x: f64) -> f64 {
        if x > self.at {
            1.0
        } else {
            0.0
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.at]
    }
}

const FEAS_EPS: f64 = 1e-12;

fn sandwich_feasible<F: CdfLaw + ?Sized, G: CdfLaw + ?Sized>(
    f: &F,
    g: &G,
    bf: &[f64],
    bg: &[f64],
    h: f64,
) -> bool {
    // F(x) <= G(x+h) + h can only fail at jumps of F or of G(.+h)
    let upper_ok = |x: f64| {
        f.cdf(x) <= g.cdf(x + h) + h + FEAS_EPS && f.cdf_left(x) <= g.cdf_left(x + h) + h + FEAS_EPS
    };
    // G(x-h) - h <= F(x) can only fail at jumps of F or of G(.-h)
    let lower_ok = |x: f64| {
        g.cdf(x - h) - h <= f.cdf(x) + FEAS_EPS && g.cdf_left(x - h) - h <= f.cdf_left(x) + FEAS_EPS
    };
    bf.iter().all(|&p| upper_ok(p) && lower_ok(p))
        && bg.iter().all(|&p| upper_ok(p - h) && lower_ok(p + h))
}

/// Lévy distance by bisection on the sandwich feasibility, to `tol`.
/// The returned value is always feasible (an upper bound within `tol` of the
/// infimum) and lies in `[0, 1]`.
pub fn levy_distance<F: CdfLaw + ?Sized, G: CdfLaw + ?Sized>(f: &F, g: &G, tol: f64) -> f64 {
    assert!(tol > 0.0, "levy_distance needs tol > 0");
    let bf = f.breakpoints();
    let bg = g.breakpoints();
    if sandwich_feasible(f, g, &bf, &bg, 0.0) {
        return 0.0;
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if sandwich_feasible(f, g, &bf, &bg, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Kolmogorov (sup) distance between two step CDFs.
pub fn kolmogorov_distance<F: CdfLaw + ?Sized, G: CdfLaw + ?Sized>(f: &F, g: &G) -> f64 {
    let mut worst = 0.0f64;
    for p in f.breakpoints().into_iter().chain(g.breakpoints()) {
        worst = worst.max((f.cdf(p) - g.cdf(p)).abs());
        worst = worst.max((f.cdf_left(p) - g.cdf_left(p)).abs());
    }
    worst
}

/// Empirical characteristic function on a grid, with the `1/sqrt(M)`
/// per-point standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct CfEstimate {
    pub t: Vec<f64>,
    pub values: Vec<Complex64>,
    pub std_error: f64,
}

pub fn empirical_cf(law: &EmpiricalLaw, t_grid: &[f64]) -> CfEstimate {
    let m = law.len();
    assert!(m >= 100, "empirical_cf needs at least 100 samples");
    let values = t_grid
        .iter()
        .map(|&t| {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for &v in law.values() {
                re += (t * v).cos();
                im += (t * v).sin();
            }
            Complex64::new(re / m as f64, im / m as f64)
        })
        .collect();
    CfEstimate {
        t: t_grid.to_vec(),
        values,
        std_error: 1.0 / (m as f64).sqrt(),
    }
}

/// Smoothing bound on the Lévy distance from a characteristic-function gap:
/// `(1/pi) ∫_0^T diff(t)/t dt + 2e ln(T)/T`, valid for `T > 1.3`.
///
/// `cf_diff[i]` is `|psi_n(t_i) - psi(t_i)|` on the strictly increasing grid
/// `t_grid` ending at `T`. Both characteristic functions equal 1 at the
/// origin, so the integrand is bounded near 0; below the first grid point it
/// is extended by its value there, adding at most `t_min · sup(integrand)`.
pub fn zolotarev_bound(t_grid: &[f64], cf_diff: &[f64], t_max: f64) -> Result<f64, MetricsError> {
    if t_max <= 1.3 || t_max.is_nan() {
        return Err(MetricsError::InvalidT(t_max));
    }
    if t_grid.len() != cf_diff.len() || t_grid.len() < 2 {
        return Err(MetricsError::BadGrid(
            "grid and diff lengths must match (>= 2)".into(),
        ));
    }
    if t_grid[0] <= 0.0 {
        return Err(MetricsError::BadGrid("grid must start above 0".into()));
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::BadGrid(
            "grid must be strictly increasing".into(),
        ));
    }
    let last = *t_grid.last().unwrap();
    if (last - t_max).abs() > 1e-9 * t_max.max(1.0) {
        return Err(MetricsError::BadGrid(format!(
            "grid must end at T = {t_max}, ends at {last}"
        )));
    }
    // constant extension over (0, t_0]
    let mut integral = cf_diff[0];
    for i in 1..t_grid.len() {
        let g0 = cf_diff[i - 1] / t_grid[i - 1];
        let g1 = cf_diff[i] / t_grid[i];
        integral += 0.5 * (g0 + g1) * (t_grid[i] - t_grid[i - 1]);
    }
    Ok(integral / std::f64::consts::PI + 2.0 * std::f64::consts::E * t_max.ln() / t_max)
}

/// Inputs of the closed-form rate bound. `coefficient` selects 8 (the proof's
/// integrated display) or 2 (the assembled inequality; the two are not
/// reconciled, 8 is the conservative default).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBoundParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub mu: f64,
    pub r: f64,
    pub b: f64,
    pub ell: u32,
    pub coefficient: f64,
}

impl RateBoundParams {
    pub fn new(c1: f64, c2: f64, c3: f64, mu: f64, r: f64, b: f64) -> Self {
        Self {
            c1,
            c2,
            c3,
            mu,
            r,
            b,
            ell: 2,
            coefficient: 8.0,
        }
    }
}

/// Evaluate the closed-form Lévy-distance bound at sample size `n`:
/// `(e^{2mu}/pi) (C2/n + 3 C1 C3 r^{b ln n} + coeff C1^2 b ln(n)/n) sqrt(n)
///  + 2e ln(sqrt n)/sqrt(n)`.
pub fn theoretical_rate_bound(p: &RateBoundParams, n: u64) -> Result<f64, MetricsError> {
    let bad = |msg: String| Err(MetricsError::InvalidParameters(msg));
    if p.r <= 0.0 || p.r >= 1.0 || p.r.is_nan() {
        return bad(format!("r must be in (0,1), got {}", p.r));
    }
    for (name, v) in [("C1", p.c1), ("C2", p.c2), ("C3", p.c3), ("mu", p.mu)] {
        if !(v > 0.0 && v.is_finite()) {
            return bad(format!("{name} must be positive, got {v}"));
        }
    }
    let b_min = 1.0 / (1.0 / p.r).ln();
    if p.b < b_min {
        return bad(format!(
            "b must be at least 1/ln(1/r) = {b_min}, got {}",
            p.b
        ));
    }
    if n < 3 {
        return bad(format!("n must be at least 3, got {n}"));
    }
    let ln_n = (n as f64).ln();
    if p.b * ln_n < p.ell as f64 {
        return bad(format!(
            "b ln n = {} is below the declared ell = {}",
            p.b * ln_n,
            p.ell
        ));
    }
    if p.coefficient != 8.0 && p.coefficient != 2.0 {
        return bad(format!("coefficient must be 2 or 8, got {}", p.coefficient));
    }
    let nf = n as f64;
    let inner = p.c2 / nf
        + 3.0 * p.c1 * p.c3 * p.r.powf(p.b * ln_n)
        + p.coefficient * p.c1 * p.c1 * p.b * ln_n / nf;
    let t = nf.sqrt();
    Ok((2.0 * p.mu).exp() / std::f64::consts::PI * inner * t
        + 2.0 * std::f64::consts::E * (0.5 * ln_n) / t)
}

/// Configuration of the n-sweep rate study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateStudyConfig {
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub bootstrap: usize,
    pub t_points: usize,
    pub levy_tol: f64,
    pub burn_in: Option<usize>,
    pub grid: GridSpec,
    pub reference_samples: usize,
}

impl RateStudyConfig {
    pub fn new(n_grid: Vec<usize>, reps: usize, seed: u64) -> Self {
        Self {
            n_grid,
            reps,
            seed,
            bootstrap: 50,
            t_points: 200,
            levy_tol: 1e-6,
            burn_in: None,
            grid: GridSpec::default(),
            reference_samples: 1_000_000,
        }
    }
}

/// One row of the rate study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub reps: usize,
    pub levy_hat: f64,
    pub levy_err: f64,
    pub envelope_ratio: f64,
    pub zol_bound: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudyReport {
    /// Invariant density at the window edge: the limit intensity.
    pub intensity: f64,
    /// `1/sqrt(reps)`, the Monte Carlo scale used by dominance checks.
    pub mc_sigma: f64,
    pub rows: Vec<RateRow>,
}

impl RateStudyReport {
    /// CSV body with the study's column set.
    pub fn csv(&self, config_hash: &str) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    r.reps.to_string(),
                    r.levy_hat.to_string(),
                    r.levy_err.to_string(),
                    r.envelope_ratio.to_string(),
                    r.zol_bound.to_string(),
                    r.seconds.to_string(),
                ]
            })
            .collect();
        csv_body(
            config_hash,
            "n,M,levy_hat,levy_err,envelope_ratio,zol_bound,seconds",
            &rows,
        )
    }
}

enum LimitCdf {
    Poisson(PoissonLaw),
    Reference(EmpiricalLaw),
}

impl CdfLaw for LimitCdf {
    fn cdf(&self, x: f64) -> f64 {
        match self {
            LimitCdf::Poisson(p) => p.cdf(x),
            LimitCdf::Reference(e) => e.cdf(x),
        }
    }

    fn cdf_left(&self, x: f64) -> f64 {
        match self {
            LimitCdf::Poisson(p) => p.cdf_left(x),
            LimitCdf::Reference(e) => e.cdf_left(x),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            LimitCdf::Poisson(p) => p.breakpoints(),
            LimitCdf::Reference(e) => e.breakpoints(),
        }
    }
}

/// Geometric grid from `t_min` to `t_max`.
fn geometric_grid(t_min: f64, t_max: f64, points: usize) -> Vec<f64> {
    let k = points.max(2);
    (0..k)
        .map(|i| t_min * (t_max / t_min).powf(i as f64 / (k - 1) as f64))
        .collect()
}

/// Simulate the row sums for one `n` across `reps` replications, one derived
/// stream per replication (`stream_base + k`).
pub fn simulate_row_sums(
    model: &ArModel,
    n: usize,
    reps: usize,
    seed: u64,
    stream_base: u64,
    burn: usize,
) -> Vec<f64> {
    let jump = model.jump_law();
    let window = Window::new(0.0, 1.0 / n as f64);
    (0..reps)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_for(seed, stream_base + k as u64);
            let path = simulate_chain(model, n, burn, &mut rng);
            build_row(&path, &jump, window).sum
        })
        .collect()
}

/// The n-sweep rate study: for each `n`, simulate the row-sum law, measure
/// its Lévy distance to the compound Poisson limit (exact Poisson CDF for
/// unit jumps, a large reference sample otherwise), attach a bootstrap error
/// bar, the envelope ratio `L sqrt(n)/ln n`, and the empirical smoothing
/// bound at `T = sqrt(n)`.
pub fn rate_study(model: &ArModel, cfg: &RateStudyConfig) -> Result<RateStudyReport, MetricsError> {
    if cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::BadConfig(
            "n_grid must be strictly increasing".into(),
        ));
    }
    if cfg.n_grid.first().is_some_and(|&n0| n0 < 2) {
        return Err(MetricsError::BadConfig(
            "n_grid entries must be >= 2".into(),
        ));
    }
    if cfg.reps < 1000 {
        return Err(MetricsError::BadConfig(format!(
            "rate study needs at least 1000 replications, got {}",
            cfg.reps
        )));
    }

    let density = solve_invariant_density(model, &cfg.grid, 1e-9, 500)?;
    let mu = density.at_zero();
    let limit_law = CompoundPoissonLaw::new(mu, model.jump_law())?;
    let mc_sigma = 1.0 / (cfg.reps as f64).sqrt();

    let limit_cdf = match model.mark {
        MarkTransform::One => LimitCdf::Poisson(PoissonLaw { mu }),
        _ => {
            let mut rng = stream_for(cfg.seed, blocks::REFERENCE);
            let samples: Vec<f64> = (0..cfg.reference_samples)
                .map(|_| limit_law.sample(&mut rng))
                .collect();
            LimitCdf::Reference(EmpiricalLaw::from_samples(samples))
        }
    };

    let burn = cfg.burn_in.unwrap_or_else(|| default_burn_in(model));
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        let start = std::time::Instant::now();
        let base = blocks::REPLICATION + ((ni as u64) << 32);
        let sums = simulate_row_sums(model, n, cfg.reps, cfg.seed, base, burn);
        let emp = EmpiricalLaw::from_samples(sums.clone());
        let levy_hat = levy_distance(&emp, &limit_cdf, cfg.levy_tol);

        // bootstrap error bar
        let boots: Vec<f64> = (0..cfg.bootstrap)
            .into_par_iter()
            .map(|b| {
                let mut rng =
                    stream_for(cfg.seed, blocks::BOOTSTRAP + ((ni as u64) << 32) + b as u64);
                let resampled: Vec<f64> = (0..sums.len())
                    .map(|_| sums[rand::Rng::gen_range(&mut rng, 0..sums.len())])
                    .collect();
                levy_distance(
                    &EmpiricalLaw::from_samples(resampled),
                    &limit_cdf,
                    cfg.levy_tol,
                )
            })
            .collect();
        let levy_err = if boots.len() >= 2 {
            let m = boots.iter().sum::<f64>() / boots.len() as f64;
            (boots.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (boots.len() - 1) as f64).sqrt()
        } else {
            0.0
        };

        let nf = n as f64;
        let envelope_ratio = levy_hat * nf.sqrt() / nf.ln();

        // empirical smoothing bound at T = sqrt(n)
        let t_max = nf.sqrt();
        let t_grid = geometric_grid(1e-3, t_max, cfg.t_points);
        let est = empirical_cf(&emp, &t_grid);
        let mut diff = Vec::with_capacity(t_grid.len());
        for (i, &t) in t_grid.iter().enumerate() {
            diff.push((est.values[i] - limit_law.char_fn(t)?).norm());
        }
        let zol = zolotarev_bound(&t_grid, &diff, t_max)?;

        rows.push(RateRow {
            n,
            reps: cfg.reps,
            levy_hat,
            levy_err,
            envelope_ratio,
            zol_bound: zol,
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    Ok(RateStudyReport {
        intensity: mu,
        mc_sigma,
        rows,
    })
}
