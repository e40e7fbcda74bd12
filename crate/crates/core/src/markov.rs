//! Additive-noise Markov chains: simulation, invariant density, mixing.
//!
//! Two model shapes share one simulation path via [`StateModel`]: the plain
//! autoregression `X_j = h(X_{j-1}) + eps_j` and the threshold autoregression
//! whose drift switches between two affine regimes at an unknown threshold.
//! The invariant density is computed as the fixed point of the transfer
//! operator `p -> ∫ q(x - h(y)) p(y) dy` with trapezoid quadrature on a
//! uniform grid.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{InnovationDensity, JumpLaw, MarkTransform};
use crate::rng::stream_for;

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error("drift slope must satisfy |rho| < 1, got {0}")]
    UnstableDrift(f64),
    #[error("threshold {theta} outside the parameter interval ({lo}, {hi})")]
    ThresholdOutOfRange { theta: f64, lo: f64, hi: f64 },
    #[error(
        "regimes coincide at the threshold: delta(theta) = 0, the threshold is unidentifiable"
    )]
    Unidentifiable,
    #[error("invariant-density grid needs at least 3 points, got {0}")]
    GridTooSmall(usize),
    #[error("transfer-operator iteration lost mass or positivity (mass {mass}) at sweep {sweep}")]
    MassDrift { mass: f64, sweep: usize },
    #[error("no convergence after {iterations} sweeps (last sup-change {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("mixing diagnostic needs at least 1000 replications, got {0}")]
    TooFewReplications(usize),
    #[error("conditioning cell {cell} received {hits} hits (< {min}) at the diagnostic anchor")]
    InsufficientOccupancy {
        cell: usize,
        hits: usize,
        min: usize,
    },
    #[error("mixing diagnostic needs a nonempty lag list")]
    NoLags,
}

/// Drift function of the plain autoregression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    /// `h ≡ 0`: the chain is the i.i.d. innovation sequence.
    Zero,
    /// `h(x) = rho x`, `|rho| < 1`.
    Linear { rho: f64 },
    /// `h(x) = rho clamp(x, -bound, bound)`; linear near the origin, flat
    /// beyond `bound`.
    ClippedLinear { rho: f64, bound: f64 },
}

impl Drift {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Linear { rho } => rho * x,
            Drift::ClippedLinear { rho, bound } => rho * x.clamp(-bound, bound),
        }
    }

    /// Contraction certificate `(r, c)`: `|h(x)| <= r |x|` for `|x| >= c`.
    pub fn contraction(&self) -> (f64, f64) {
        match *self {
            Drift::Zero => (0.0, 0.0),
            Drift::Linear { rho } => (rho.abs(), 0.0),
            Drift::ClippedLinear { rho, bound } => (rho.abs(), bound.max(1.0)),
        }
    }

    fn validate(&self) -> Result<(), MarkovError> {
        let (r, _) = self.contraction();
        if r >= 1.0 || !r.is_finite() {
            return Err(MarkovError::UnstableDrift(r));
        }
        Ok(())
    }
}

/// Plain autoregression with a mark transform attached (the transform is what
/// turns path innovations into triangular-array jumps downstream).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub drift: Drift,
    pub innovation: InnovationDensity,
    pub mark: MarkTransform,
}

impl ArModel {
    pub fn new(
        drift: Drift,
        innovation: InnovationDensity,
        mark: MarkTransform,
    ) -> Result<Self, MarkovError> {
        drift.validate()?;
        Ok(Self {
            drift,
            innovation,
            mark,
        })
    }

    pub fn jump_law(&self) -> JumpLaw {
        JumpLaw::new(self.mark, self.innovation)
    }
}

/// One affine regime function `g(x) = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeFn {
    pub slope: f64,
    pub intercept: f64,
}

impl RegimeFn {
    pub fn new(slope: f64, intercept: f64) -> Self {
        Self { slope, intercept }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Threshold autoregression: the drift is `g_plus` at or above the threshold
/// and `g_minus` below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TarModel {
    pub g_plus: RegimeFn,
    pub g_minus: RegimeFn,
    pub threshold: f64,
    /// Open parameter interval `(a, b)` the threshold lives in.
    pub theta_bounds: (f64, f64),
    pub innovation: InnovationDensity,
}

impl TarModel {
    /// Checked constructor: threshold strictly inside the interval, stable
    /// slopes, and an identifiable jump `delta(theta) != 0`.
    pub fn new(
        g_plus: RegimeFn,
        g_minus: RegimeFn,
        threshold: f64,
        theta_bounds: (f64, f64),
        innovation: InnovationDensity,
    ) -> Result<Self, MarkovError> {
        let model = Self::new_unchecked(g_plus, g_minus, threshold, theta_bounds, innovation);
        let r = g_plus.slope.abs().max(g_minus.slope.abs());
        if r >= 1.0 || !r.is_finite() {
            return Err(MarkovError::UnstableDrift(r));
        }
        let (lo, hi) = theta_bounds;
        if !(lo < threshold && threshold < hi) {
            return Err(MarkovError::ThresholdOutOfRange {
                theta: threshold,
                lo,
                hi,
            });
        }
        if model.jump_at(threshold) == 0.0 {
            return Err(MarkovError::Unidentifiable);
        }
        Ok(model)
    }

    /// Unchecked constructor for degenerate diagnostics (e.g. flat-likelihood
    /// checks with coinciding regimes). The estimation pipeline always goes
    /// through [`TarModel::new`].
    pub fn new_unchecked(
        g_plus: RegimeFn,
        g_minus: RegimeFn,
        threshold: f64,
        theta_bounds: (f64, f64),
        innovation: InnovationDensity,
    ) -> Self {
        Self {
            g_plus,
            g_minus,
            threshold,
            theta_bounds,
            innovation,
        }
    }

    /// Regime jump size `delta(x) = g_plus(x) - g_minus(x)`.
    pub fn jump_at(&self, x: f64) -> f64 {
        self.g_plus.eval(x) - self.g_minus.eval(x)
    }

    /// Drift under a candidate threshold `theta` (ties go to the upper
    /// regime, `x >= theta`).
    pub fn drift_with_threshold(&self, x: f64, theta: f64) -> f64 {
        if x >= theta {
            self.g_plus.eval(x)
        } else {
            self.g_minus.eval(x)
        }
    }
}

/// Common simulation surface for both model shapes.
pub trait StateModel {
    fn drift_at(&self, x: f64) -> f64;
    fn innovation(&self) -> &InnovationDensity;
    /// Contraction certificate `(r, c)` with `r in [0, 1)`.
    fn contraction(&self) -> (f64, f64);
}

impl StateModel for ArModel {
    fn drift_at(&self, x: f64) -> f64 {
        self.drift.eval(x)
    }

    fn innovation(&self) -> &InnovationDensity {
        &self.innovation
    }

    fn contraction(&self) -> (f64, f64) {
        self.drift.contraction()
    }
}

impl StateModel for TarModel {
    fn drift_at(&self, x: f64) -> f64 {
        self.drift_with_threshold(x, self.threshold)
    }

    fn innovation(&self) -> &InnovationDensity {
        &self.innovation
    }

    fn contraction(&self) -> (f64, f64) {
        let r = self.g_plus.slope.abs().max(self.g_minus.slope.abs());
        let c_abs = self
            .g_plus
            .intercept
            .abs()
            .max(self.g_minus.intercept.abs());
        if c_abs == 0.0 {
            (r, 0.0)
        } else {
            // |g(x)| <= r|x| + c_abs <= r'|x| for |x| >= c_abs / (r' - r)
            let r2 = 0.5 * (1.0 + r);
            (r2, c_abs / (r2 - r))
        }
    }
}

/// A simulated trajectory with its driving innovations retained:
/// `states = X_0..X_n`, `innovations = eps_1..eps_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    pub states: Vec<f64>,
    pub innovations: Vec<f64>,
}

impl ChainPath {
    pub fn len(&self) -> usize {
        self.innovations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.innovations.is_empty()
    }
}

/// Default burn-in: `10 ceil(1/(1-r)) + 100` steps, geometric mixing makes
/// the residual initialization bias negligible at this depth.
pub fn default_burn_in<M: StateModel + ?Sized>(model: &M) -> usize {
    let (r, _) = model.contraction();
    10 * (1.0 / (1.0 - r)).ceil() as usize + 100
}

/// Simulate `n` steps after `burn_in` steps from the fixed start `0.0`;
/// `X_0` is the post-burn-in state.
pub fn simulate_chain<M: StateModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> ChainPath {
    assert!(n >= 1, "simulate_chain needs n >= 1");
    let q = *model.innovation();
    let mut x = 0.0f64;
    for _ in 0..burn_in {
        x = model.drift_at(x) + q.sample(rng);
    }
    let mut states = Vec::with_capacity(n + 1);
    let mut innovations = Vec::with_capacity(n);
    states.push(x);
    for _ in 0..n {
        let eps = q.sample(rng);
        x = model.drift_at(x) + eps;
        states.push(x);
        innovations.push(eps);
    }
    ChainPath {
        states,
        innovations,
    }
}

/// Grid for the invariant-density solver. `points` is forced odd so the
/// origin is a node; `x_max = None` means the default `10 sigma / (1 - r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_max: Option<f64>,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_max: None,
            points: 4001,
        }
    }
}

/// Invariant density on a uniform grid with trapezoid weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantDensity {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Fixed-point residual `sup_i |p_i - (T p)_i / mass(T p)|` at the
    /// returned iterate. The mass renormalization removes the quadrature's
    /// Perron-eigenvalue offset (the raw trapezoid operator of a kinked
    /// density conserves mass only to O(h^2)).
    pub residual: f64,
}

impl InvariantDensity {
    /// Linear interpolation (the grid always contains the origin as a node).
    pub fn density_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x <= g[0] {
            return self.values[0];
        }
        if x >= g[g.len() - 1] {
            return self.values[g.len() - 1];
        }
        let h = g[1] - g[0];
        let i = ((x - g[0]) / h).floor() as usize;
        let i = i.min(g.len() - 2);
        let w = (x - g[i]) / h;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    pub fn at_zero(&self) -> f64 {
        self.density_at(0.0)
    }

    pub fn mass(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.values)
            .map(|(w, p)| w * p)
            .sum()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

fn apply_transfer(
    q: &InnovationDensity,
    xs: &[f64],
    drift: &[f64],
    w: &[f64],
    p: &[f64],
    out: &mut [f64],
) {
    let g = xs.len();
    let h = xs[1] - xs[0];
    let x0 = xs[0];
    // terms with |x - h(y)| beyond the cut are below 1e-17 of the peak
    let cut = q.integration_radius().max(12.0 * q.scale());
    out.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..g {
        let d = drift[j];
        let pw = w[j] * p[j];
        if pw == 0.0 {
            continue;
        }
        let lo = (((d - cut) - x0) / h).floor().max(0.0) as usize;
        let hi = ((((d + cut) - x0) / h).ceil() as usize).min(g - 1);
        for i in lo..=hi {
            out[i] += pw * q.density(xs[i] - d);
        }
    }
}

/// Fixed-point iteration of the transfer operator, starting from `q`
/// restricted to the grid. Each sweep is checked for positivity and mass
/// conservation, then renormalized.
pub fn solve_invariant_density<M: StateModel>(
    model: &M,
    grid: &GridSpec,
    tol: f64,
    max_iter: usize,
) -> Result<InvariantDensity, MarkovError> {
    let points = if grid.points.is_multiple_of(2) {
        grid.points + 1
    } else {
        grid.points
    };
    if points < 3 {
        return Err(MarkovError::GridTooSmall(points));
    }
    let (r, _) = model.contraction();
    let q = *model.innovation();
    let x_max = grid.x_max.unwrap_or(10.0 * q.scale() / (1.0 - r));
    let h = 2.0 * x_max / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| -x_max + h * i as f64).collect();
    let mut w = vec![h; points];
    w[0] = 0.5 * h;
    w[points - 1] = 0.5 * h;
    let drift: Vec<f64> = xs.iter().map(|&y| model.drift_at(y)).collect();

    let mut p: Vec<f64> = xs.iter().map(|&x| q.density(x)).collect();
    let mass0: f64 = w.iter().zip(&p).map(|(wi, pi)| wi * pi).sum();
    p.iter_mut().for_each(|v| *v /= mass0);

    let mut next = vec![0.0; points];
    let mut iterations = 0usize;
    let mut change;
    loop {
        iterations += 1;
        apply_transfer(&q, &xs, &drift, &w, &p, &mut next);
        let mass: f64 = w.iter().zip(&next).map(|(wi, pi)| wi * pi).sum();
        // kinked densities conserve mass only to the O(h^2) trapezoid error;
        // drift past 1e-5 means truncation or underflow, not quadrature
        if !(mass.is_finite() && (mass - 1.0).abs() < 1e-5) || next.iter().any(|v| *v < 0.0) {
            return Err(MarkovError::MassDrift {
                mass,
                sweep: iterations,
            });
        }
        next.iter_mut().for_each(|v| *v /= mass);
        change = p
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut p, &mut next);
        if change <= tol {
            break;
        }
        if iterations >= max_iter {
            return Err(MarkovError::NoConvergence {
                iterations,
                residual: change,
            });
        }
    }
    // fixed-point residual of the renormalized operator at the accepted iterate
    apply_transfer(&q, &xs, &drift, &w, &p, &mut next);
    let mass: f64 = w.iter().zip(&next).map(|(wi, pi)| wi * pi).sum();
    let residual = p
        .iter()
        .zip(&next)
        .map(|(a, b)| (a - b / mass).abs())
        .fold(0.0, f64::max);
    Ok(InvariantDensity {
        grid: xs,
        values: p,
        weights: w,
        iterations,
        residual,
    })
}

/// One row of the mixing table: the largest conditional-vs-marginal gap over
/// the test-function dictionary at this lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingRow {
    pub lag: usize,
    pub alpha_hat: f64,
    pub min_cell_hits: usize,
}

/// Geometric fit `alpha(k) ~ R rho^{k-2}` of the diagnostic table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingFit {
    pub big_r: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingDiagnostic {
    pub rows: Vec<MixingRow>,
    /// Present when at least two lags were requested. A heuristic readout,
    /// not an estimator of the true mixing coefficient.
    pub fit: Option<MixingFit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixingConfig {
    pub lags: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub burn_in: Option<usize>,
}

const MIN_CELL_HITS: usize = 50;

/// Monte Carlo mixing diagnostic: for each lag `k`, the largest gap
/// `|E[g(X_{i+k}) | X_i in A] - E g(X)|` over a fixed dictionary of dyadic
/// interval indicators `g` and four coarse conditioning cells `A`.
pub fn mixing_diagnostic<M: StateModel + Sync>(
    model: &M,
    cfg: &MixingConfig,
) -> Result<MixingDiagnostic, MarkovError> {
    if cfg.reps < 1000 {
        return Err(MarkovError::TooFewReplications(cfg.reps));
    }
    if cfg.lags.is_empty() {
        return Err(MarkovError::NoLags);
    }
    let (r, _) = model.contraction();
    let scale = model.innovation().scale() / (1.0 - r);
    let burn = cfg.burn_in.unwrap_or_else(|| default_burn_in(model));
    let max_lag = *cfg.lags.iter().max().unwrap();
    assert!(max_lag >= 1, "lags must be >= 1");

    // conditioning cells over the anchor state
    let cells = [
        (-4.0 * scale, -scale),
        (-scale, 0.0),
        (0.0, scale),
        (scale, 4.0 * scale),
    ];
    // dictionary: dyadic intervals over [-4S, 4S] at widths S and S/2
    let mut dict: Vec<(f64, f64)> = Vec::new();
    for level in [1.0f64, 2.0] {
        let width = scale / level;
        let m = (8.0 * level) as i64;
        for j in 0..m {
            let lo = -4.0 * scale + width * j as f64;
            dict.push((lo, lo + width));
        }
    }

    // anchors[k] and the state at each requested lag
    let mut anchors = Vec::with_capacity(cfg.reps);
    let mut at_lag: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.reps); cfg.lags.len()];
    for k in 0..cfg.reps {
        let mut rng = stream_for(cfg.seed, k as u64);
        let path = simulate_chain(model, max_lag, burn, &mut rng);
        anchors.push(path.states[0]);
        for (li, &lag) in cfg.lags.iter().enumerate() {
            at_lag[li].push(path.states[lag]);
        }
    }

    let cell_of = |x: f64| cells.iter().position(|&(lo, hi)| lo <= x && x < hi);
    let mut cell_members: Vec<Vec<usize>> = vec![Vec::new(); cells.len()];
    for (i, &a) in anchors.iter().enumerate() {
        if let Some(c) = cell_of(a) {
            cell_members[c].push(i);
        }
    }
    for (c, members) in cell_members.iter().enumerate() {
        if members.len() < MIN_CELL_HITS {
            return Err(MarkovError::InsufficientOccupancy {
                cell: c,
                hits: members.len(),
                min: MIN_CELL_HITS,
            });
        }
    }
    let min_hits = cell_members.iter().map(Vec::len).min().unwrap();

    let mut rows = Vec::with_capacity(cfg.lags.len());
    for (li, &lag) in cfg.lags.iter().enumerate() {
        let xs = &at_lag[li];
        let mut alpha: f64 = 0.0;
        for &(glo, ghi) in &dict {
            let ind = |x: f64| -> f64 {
                if glo <= x && x < ghi {
                    1.0
                } else {
                    0.0
                }
            };
            let overall: f64 = xs.iter().map(|&x| ind(x)).sum::<f64>() / xs.len() as f64;
            for members in &cell_members {
                let cond: f64 =
                    members.iter().map(|&i| ind(xs[i])).sum::<f64>() / members.len() as f64;
                alpha = alpha.max((cond - overall).abs());
            }
        }
        rows.push(MixingRow {
            lag,
            alpha_hat: alpha,
            min_cell_hits: min_hits,
        });
    }

    let fit = if rows.len() >= 2 {
        // least squares of ln alpha against k
        let n = rows.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for row in &rows {
            let x = row.lag as f64;
            let y = row.alpha_hat.max(1e-12).ln();
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let denom = n * sxx - sx * sx;
        if denom.abs() < 1e-12 {
            None
        } else {
            let slope = (n * sxy - sx * sy) / denom;
            let intercept = (sy - slope * sx) / n;
            Some(MixingFit {
                big_r: (intercept + 2.0 * slope).exp(),
                rho: slope.exp(),
            })
        }
    } else {
        None
    };

    Ok(MixingDiagnostic { rows, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::InnovationFamily;

    fn gaussian_ar(rho: f64) -> ArModel {
        ArModel::new(
            if rho == 0.0 {
                Drift::Zero
            } else {
                Drift::Linear { rho }
            },
            InnovationDensity::gaussian(1.0).unwrap(),
            MarkTransform::One,
        )
        .unwrap()
    }

    #[test]
    fn identical_seeds_identical_paths() {
        let model = gaussian_ar(0.5);
        let mut r1 = stream_for(3, 0);
        let mut r2 = stream_for(3, 0);
        let p1 = simulate_chain(&model, 500, 100, &mut r1);
        let p2 = simulate_chain(&model, 500, 100, &mut r2);
        assert_eq!(p1, p2);
        assert_eq!(p1.states.len(), 501);
        assert_eq!(p1.innovations.len(), 500);
    }

    #[test]
    fn zero_drift_marginal_matches_innovation() {
        // with h = 0 the states are the innovations themselves: KS at 1%
        let model = gaussian_ar(0.0);
        let mut rng = stream_for(5, 0);
        let path = simulate_chain(&model, 10_000, 10, &mut rng);
        let mut xs = path.states[1..].to_vec();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = xs.len() as f64;
        let mut d: f64 = 0.0;
        for (k, &x) in xs.iter().enumerate() {
            let f = model.innovation.cdf(x);
            d = d.max((f - k as f64 / m).abs());
            d = d.max(((k + 1) as f64 / m - f).abs());
        }
        assert!(d < 1.6276 / m.sqrt(), "KS {d}");
        for (j, &e) in path.innovations.iter().enumerate() {
            assert_eq!(path.states[j + 1], e);
        }
    }

    #[test]
    fn ar_half_stationary_variance() {
        // replication-based check of Var X = 1/(1-rho^2) = 4/3
        let model = gaussian_ar(0.5);
        let reps = 200usize;
        let t = 4000usize;
        let vars: Vec<f64> = (0..reps)
            .map(|k| {
                let mut rng = stream_for(7, k as u64);
                let path = simulate_chain(&model, t, 120, &mut rng);
                let mean: f64 = path.states.iter().sum::<f64>() / path.states.len() as f64;
                path.states
                    .iter()
                    .map(|x| (x - mean) * (x - mean))
                    .sum::<f64>()
                    / (path.states.len() - 1) as f64
            })
            .collect();
        let mean_var: f64 = vars.iter().sum::<f64>() / reps as f64;
        let sd: f64 =
            (vars.iter().map(|v| (v - mean_var).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let se = sd / (reps as f64).sqrt();
        assert!(
            (mean_var - 4.0 / 3.0).abs() < 3.0 * se,
            "mean var {mean_var} vs 4/3 (3se {:.3e})",
            3.0 * se
        );
    }

    #[test]
    fn invariant_density_zero_drift_reproduces_q() {
        let model = gaussian_ar(0.0);
        let sol = solve_invariant_density(&model, &GridSpec::default(), 1e-10, 50).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.residual < 1e-10, "residual {:e}", sol.residual);
        let q = model.innovation;
        let worst = sol
            .grid
            .iter()
            .zip(&sol.values)
            .map(|(&x, &p)| (p - q.density(x)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "sup |p - q| = {worst:e}");
    }

    #[test]
    fn invariant_density_matches_gaussian_closed_form() {
        for rho in [0.3, 0.5, 0.6] {
            let model = gaussian_ar(rho);
            let sol = solve_invariant_density(&model, &GridSpec::default(), 1e-9, 500).unwrap();
            let expected = (1.0 - rho * rho).sqrt() / crate::distributions::SQRT_2PI;
            assert!(
                (sol.at_zero() - expected).abs() < 1e-3,
                "rho={rho}: p(0)={} vs {expected}",
                sol.at_zero()
            );
            assert!((sol.mass() - 1.0).abs() < 1e-12);
            assert!(sol.values.iter().all(|&p| p > 0.0));
            assert!(sol.sup() <= model.innovation.sup_norm() + 1e-12);
        }
    }

    #[test]
    fn invariant_density_non_gaussian_families() {
        for q in [
            InnovationDensity::new(InnovationFamily::Laplace, 1.0).unwrap(),
            InnovationDensity::new(InnovationFamily::Logistic, 0.8).unwrap(),
        ] {
            let model = ArModel::new(Drift::Linear { rho: 0.4 }, q, MarkTransform::One).unwrap();
            let sol = solve_invariant_density(&model, &GridSpec::default(), 1e-9, 500).unwrap();
            assert!(sol.at_zero() > 0.0);
            assert!(sol.residual <= 1e-9);
            assert!(sol.sup() <= q.sup_norm() + 1e-12);
        }
    }

    #[test]
    fn solver_reports_no_convergence() {
        let model = gaussian_ar(0.9);
        let grid = GridSpec {
            x_max: Some(15.0),
            points: 1001,
        };
        let err = solve_invariant_density(&model, &grid, 1e-12, 2).unwrap_err();
        assert!(
            matches!(err, MarkovError::NoConvergence { .. }),
            "got {err:?}"
        );
    }

    #[test]
    fn mixing_independent_chain_is_flat() {
        let model = gaussian_ar(0.0);
        let cfg = MixingConfig {
            lags: vec![1, 2, 4],
            reps: 20_000,
            seed: 11,
            burn_in: Some(5),
        };
        let diag = mixing_diagnostic(&model, &cfg).unwrap();
        for row in &diag.rows {
            // max over 96 cell/dictionary pairs of a mean-difference of
            // bounded indicators: 4 sigma of the worst-cell MC noise
            let bound = 4.0 * (0.25 / row.min_cell_hits as f64).sqrt();
            assert!(
                row.alpha_hat <= bound,
                "lag {}: {} > {bound}",
                row.lag,
                row.alpha_hat
            );
        }
    }

    #[test]
    fn mixing_ar_chain_decays() {
        let model = gaussian_ar(0.5);
        let cfg = MixingConfig {
            lags: vec![1, 2, 3, 5],
            reps: 30_000,
            seed: 13,
            burn_in: None,
        };
        let diag = mixing_diagnostic(&model, &cfg).unwrap();
        let a: Vec<f64> = diag.rows.iter().map(|r| r.alpha_hat).collect();
        assert!(
            a[0] > a[3],
            "alpha(1)={} should exceed alpha(5)={}",
            a[0],
            a[3]
        );
        let fit = diag.fit.unwrap();
        assert!(fit.rho < 1.0, "fitted rho {} not < 1", fit.rho);
    }

    #[test]
    fn solver_is_grid_resolution_independent() {
        // halving the grid step moves p(0) by far less than the 1e-3 target
        let model = ArModel::new(
            Drift::Linear { rho: 0.4 },
            InnovationDensity::new(InnovationFamily::Laplace, 1.0).unwrap(),
            MarkTransform::One,
        )
        .unwrap();
        let coarse = solve_invariant_density(
            &model,
            &GridSpec {
                x_max: Some(18.0),
                points: 2001,
            },
            1e-9,
            500,
        )
        .unwrap();
        let fine = solve_invariant_density(
            &model,
            &GridSpec {
                x_max: Some(18.0),
                points: 4001,
            },
            1e-9,
            500,
        )
        .unwrap();
        assert!(
            (coarse.at_zero() - fine.at_zero()).abs() < 1e-4,
            "p(0) moved from {} to {} under refinement",
            coarse.at_zero(),
            fine.at_zero()
        );
    }

    #[test]
    fn mixing_low_occupancy_is_reported() {
        // slope 0.7 stretches the cell scale to ~3.3 sigma; the outer
        // conditioning cell then sees well under 50 of 1000 anchors
        let model = gaussian_ar(0.7);
        let cfg = MixingConfig {
            lags: vec![1],
            reps: 1000,
            seed: 19,
            burn_in: None,
        };
        let err = mixing_diagnostic(&model, &cfg).unwrap_err();
        assert!(
            matches!(err, MarkovError::InsufficientOccupancy { .. }),
            "got {err:?}"
        );
    }

    #[test]
    fn mixing_single_lag_single_row() {
        let model = gaussian_ar(0.3);
        let cfg = MixingConfig {
            lags: vec![1],
            reps: 2000,
            seed: 17,
            burn_in: None,
        };
        let diag = mixing_diagnostic(&model, &cfg).unwrap();
        assert_eq!(diag.rows.len(), 1);
        assert!(diag.fit.is_none());
    }

    #[test]
    fn contraction_certificates_hold() {
        let drifts = [
            Drift::Zero,
            Drift::Linear { rho: 0.6 },
            Drift::Linear { rho: -0.3 },
            Drift::ClippedLinear {
                rho: 0.8,
                bound: 2.0,
            },
        ];
        for drift in drifts {
            let (r, c) = drift.contraction();
            assert!((0.0..1.0).contains(&r));
            for i in 1..200 {
                let x = c.max(1e-9) * (1.0 + i as f64 * 0.25);
                for sign in [1.0, -1.0] {
                    assert!(
                        drift.eval(sign * x).abs() <= r * x + 1e-12,
                        "{drift:?} breaks its certificate at {x}"
                    );
                }
            }
        }
        // affine regimes: |g(x)| <= r'|x| beyond the stored cutoff
        let q = InnovationDensity::gaussian(1.0).unwrap();
        let tar = TarModel::new(
            RegimeFn::new(0.5, 0.5),
            RegimeFn::new(-0.5, -0.5),
            0.0,
            (-1.0, 1.0),
            q,
        )
        .unwrap();
        let (r, c) = tar.contraction();
        assert!((0.0..1.0).contains(&r) && c > 0.0);
        for i in 0..200 {
            let x = c * (1.0 + i as f64 * 0.25);
            for sign in [1.0, -1.0] {
                assert!(tar.drift_at(sign * x).abs() <= r * x + 1e-12);
            }
        }
    }

    #[test]
    fn tar_constructor_enforces_invariants() {
        let q = InnovationDensity::gaussian(1.0).unwrap();
        // identifiable affine model
        assert!(TarModel::new(
            RegimeFn::new(0.5, 0.5),
            RegimeFn::new(-0.5, -0.5),
            0.0,
            (-1.0, 1.0),
            q
        )
        .is_ok());
        // delta(theta) = 0: pure linear regimes at theta = 0
        assert!(matches!(
            TarModel::new(
                RegimeFn::new(0.5, 0.0),
                RegimeFn::new(-0.5, 0.0),
                0.0,
                (-1.0, 1.0),
                q
            ),
            Err(MarkovError::Unidentifiable)
        ));
        // threshold outside the interval
        assert!(matches!(
            TarModel::new(
                RegimeFn::new(0.5, 0.5),
                RegimeFn::new(-0.5, -0.5),
                2.0,
                (-1.0, 1.0),
                q
            ),
            Err(MarkovError::ThresholdOutOfRange { .. })
        ));
        // unstable slope
        assert!(matches!(
            TarModel::new(
                RegimeFn::new(1.1, 0.5),
                RegimeFn::new(-0.5, -0.5),
                0.0,
                (-1.0, 1.0),
                q
            ),
            Err(MarkovError::UnstableDrift(_))
        ));
    }

    #[test]
    fn tar_tie_goes_to_upper_regime() {
        let q = InnovationDensity::gaussian(1.0).unwrap();
        let model = TarModel::new(
            RegimeFn::new(0.5, 0.5),
            RegimeFn::new(-0.5, -0.5),
            0.0,
            (-1.0, 1.0),
            q,
        )
        .unwrap();
        assert_eq!(model.drift_at(0.0), 0.5);
        assert_eq!(model.drift_at(-1e-300), -0.5);
    }

    #[test]
    fn tar_invariant_density_positive_at_threshold() {
        let q = InnovationDensity::gaussian(1.0).unwrap();
        let model = TarModel::new(
            RegimeFn::new(0.5, 0.5),
            RegimeFn::new(-0.5, -0.5),
            0.0,
            (-1.0, 1.0),
            q,
        )
        .unwrap();
        let sol = solve_invariant_density(
            &model,
            &GridSpec {
                x_max: Some(12.0),
                points: 2001,
            },
            1e-9,
            500,
        )
        .unwrap();
        assert!(sol.at_zero() > 0.05, "p(theta) = {}", sol.at_zero());
        assert!(sol.sup() <= q.sup_norm() + 1e-12);
    }
}
