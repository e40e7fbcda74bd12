//! Triangular-array rows built from simulated paths, and a Monte Carlo audit
//! of the moment and dependence bounds the limit theory rests on.
//!
//! A row is `Y_{n,j} = f(eps_j) 1{X_{j-1} in window}` for `j = 1..n`; its sum
//! is the statistic whose law converges to the compound Poisson limit. The
//! audit estimates the scaled one-point and pair moments together with the
//! characteristic-function derivative defect, and flags any estimate that
//! exceeds its predicted bound by more than three standard errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::DistributionError;
use crate::markov::{
    default_burn_in, simulate_chain, solve_invariant_density, ArModel, ChainPath, GridSpec,
    MarkovError,
};
use crate::rng::stream_for;

#[derive(Debug, Error)]
pub enum TriangularError {
    #[error("window event never observed across {reps} replications (n = {n}); increase reps")]
    InsufficientHits { n: usize, reps: usize },
    #[error("audit needs n >= 2, got {0}")]
    RowTooShort(usize),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "window bounds out of order");
        Self { lo, hi }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// One triangular-array row together with its sum.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularRow {
    pub n: usize,
    pub values: Vec<f64>,
    pub nonzero: usize,
    pub sum: f64,
    pub window: Window,
}

/// Build the row `Y_{n,j} = f(eps_j) 1{X_{j-1} in window}` from a path that
/// retained its innovations.
pub fn build_row(
    path: &ChainPath,
    jump: &crate::distributions::JumpLaw,
    window: Window,
) -> TriangularRow {
    let n = path.len();
    let mut values = Vec::with_capacity(n);
    let mut nonzero = 0usize;
    let mut sum = 0.0;
    for j in 0..n {
        let y = if window.contains(path.states[j]) {
            jump.apply(path.innovations[j])
        } else {
            0.0
        };
        if y != 0.0 {
            nonzero += 1;
        }
        sum += y;
        values.push(y);
    }
    TriangularRow {
        n,
        values,
        nonzero,
        sum,
        window,
    }
}

/// Audit configuration. `reps = None` applies the hit-count rule
/// `ceil(100 n / sup q)`, which gives the rare pair events a fighting chance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditConfig {
    pub n: usize,
    pub reps: Option<usize>,
    pub t_grid: Vec<f64>,
    pub seed: u64,
    /// Declared dependence depth of the row (2 for the autoregressive case).
    pub ell: u32,
    pub grid: GridSpec,
    pub burn_in: Option<usize>,
}

impl AuditConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        let t_grid = (0..41).map(|i| -10.0 + 0.5 * i as f64).collect();
        Self {
            n,
            reps: None,
            t_grid,
            seed,
            ell: 2,
            grid: GridSpec::default(),
            burn_in: None,
        }
    }

    pub fn effective_reps(&self, sup_q: f64) -> usize {
        self.reps
            .unwrap_or_else(|| (100.0 * self.n as f64 / sup_q).ceil() as usize)
    }
}

/// One scaled Monte Carlo estimate with its predicted bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaledEstimate {
    pub name: String,
    pub value: f64,
    pub std_error: f64,
    pub bound: f64,
    pub violated: bool,
}

/// Audit result: scaled moment estimates, the implied constants, and any
/// violations (estimate above bound by more than three standard errors).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentAudit {
    pub n: usize,
    pub reps: usize,
    pub estimates: Vec<ScaledEstimate>,
    /// `(sup q)^2 ∨ 1 times (E|f| ∨ C' ∨ 1)`.
    pub c1_implied: f64,
    /// Lipschitz constant of the innovation density.
    pub c2_bound: f64,
    /// Invariant density at the left window edge (the limit intensity).
    pub intensity: f64,
    pub violations: Vec<String>,
}

impl MomentAudit {
    pub fn has_violation(&self) -> bool {
        !self.violations.is_empty()
    }
}

struct RepStats {
    window_hits: usize,
    prob: f64,
    abs_moment: f64,
    pair_adjacent: f64,
    pair_distant: f64,
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Monte Carlo audit of the scaled row moments against their predicted
/// bounds, plus the characteristic-function derivative defect.
pub fn moment_audit(model: &ArModel, cfg: &AuditConfig) -> Result<MomentAudit, TriangularError> {
    let n = cfg.n;
    if n < 2 {
        return Err(TriangularError::RowTooShort(n));
    }
    let q = model.innovation;
    let jump = model.jump_law();
    let reps = cfg.effective_reps(q.sup_norm());
    let burn = cfg.burn_in.unwrap_or_else(|| default_burn_in(model));
    let window = Window::new(0.0, 1.0 / n as f64);

    let density = solve_invariant_density(model, &cfg.grid, 1e-9, 500)?;
    let intensity = density.at_zero();

    let e_abs_f = jump.mean_abs_jump()?;
    // C' = sup of |f(z - h(x))| over the window square, on a fine grid
    let c_prime = {
        let mut worst = 0.0f64;
        let steps = 20usize;
        for i in 0..=steps {
            for j in 0..=steps {
                let z = window.hi * i as f64 / steps as f64;
                let x = window.hi * j as f64 / steps as f64;
                worst = worst.max(jump.apply(z - model.drift.eval(x)).abs());
            }
        }
        worst
    };

    // separation at which the generic mixing bound takes over
    let far_lag = (cfg.ell.max(2) as usize).min(n - 1);
    let stats: Vec<RepStats> = (0..reps)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_for(cfg.seed, k as u64);
            let path = simulate_chain(model, n, burn, &mut rng);
            let row = build_row(&path, &jump, window);
            let window_hits = path.states[..n]
                .iter()
                .filter(|&&x| window.contains(x))
                .count();
            let prob = row.nonzero as f64 / n as f64;
            let abs_moment = row.values.iter().map(|y| y.abs()).sum::<f64>() / n as f64;
            let mut adj = 0.0;
            let mut far = 0.0;
            for j in 1..n {
                if row.values[j] != 0.0 {
                    adj += row.values[j - 1].abs();
                }
            }
            for j in far_lag..n {
                if row.values[j] != 0.0 {
                    far += row.values[j - far_lag].abs();
                }
            }
            RepStats {
                window_hits,
                prob,
                abs_moment,
                pair_adjacent: adj / (n - 1) as f64,
                pair_distant: far / (n - far_lag) as f64,
            }
        })
        .collect();

    let total_hits: usize = stats.iter().map(|s| s.window_hits).sum();
    if total_hits == 0 {
        return Err(TriangularError::InsufficientHits { n, reps });
    }

    let nf = n as f64;
    let n2 = nf * nf;
    let sup_q = q.sup_norm();
    let mut estimates = Vec::new();
    let mut push = |name: &str, scale: f64, samples: Vec<f64>, bound: f64| {
        let (mean, se) = mean_and_se(&samples);
        let value = scale * mean;
        let std_error = scale * se;
        let violated = value > bound + 3.0 * std_error;
        estimates.push(ScaledEstimate {
            name: name.to_string(),
            value,
            std_error,
            bound,
            violated,
        });
    };

    push(
        "n_nonzero_prob",
        nf,
        stats.iter().map(|s| s.prob).collect(),
        sup_q,
    );
    push(
        "n_abs_moment",
        nf,
        stats.iter().map(|s| s.abs_moment).collect(),
        e_abs_f * sup_q,
    );
    push(
        "n2_pair_adjacent",
        n2,
        stats.iter().map(|s| s.pair_adjacent).collect(),
        sup_q * sup_q * c_prime,
    );
    push(
        "n2_pair_distant",
        n2,
        stats.iter().map(|s| s.pair_distant).collect(),
        sup_q * sup_q * e_abs_f,
    );

    // CF-derivative defect: the derivative factorizes through the window
    // probability, so the defect is n^2 |P_hat - mu/n| sup_t |phi'(t)|.
    let hit_probs: Vec<f64> = stats.iter().map(|s| s.window_hits as f64 / nf).collect();
    let (p_hat, p_se) = mean_and_se(&hit_probs);
    let mut sup_dphi = 0.0f64;
    for &t in &cfg.t_grid {
        sup_dphi = sup_dphi.max(jump.char_fn_derivative(t)?.norm());
    }
    let defect = n2 * (p_hat - intensity / nf).abs() * sup_dphi;
    let defect_se = n2 * p_se * sup_dphi;
    let c2 = q.lipschitz_constant();
    estimates.push(ScaledEstimate {
        name: "n2_cf_defect".to_string(),
        value: defect,
        std_error: defect_se,
        bound: c2,
        violated: defect > c2 + 3.0 * defect_se,
    });

    let c1_implied = (sup_q * sup_q).max(1.0) * e_abs_f.max(c_prime).max(1.0);
    let violations = estimates
        .iter()
        .filter(|e| e.violated)
        .map(|e| e.name.clone())
        .collect();

    Ok(MomentAudit {
        n,
        reps,
        estimates,
        c1_implied,
        c2_bound: c2,
        intensity,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{InnovationDensity, MarkTransform};
    use crate::markov::Drift;

    fn model(drift: Drift, mark: MarkTransform) -> ArModel {
        ArModel::new(drift, InnovationDensity::gaussian(1.0).unwrap(), mark).unwrap()
    }

    #[test]
    fn row_outside_window_is_empty() {
        let m = model(Drift::Zero, MarkTransform::One);
        let mut rng = stream_for(1, 0);
        let path = simulate_chain(&m, 200, 10, &mut rng);
        let row = build_row(&path, &m.jump_law(), Window::new(100.0, 101.0));
        assert_eq!(row.sum, 0.0);
        assert_eq!(row.nonzero, 0);
        assert!(row.values.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn indicator_row_sum_counts_entries() {
        let m = model(Drift::Linear { rho: 0.5 }, MarkTransform::One);
        let mut rng = stream_for(2, 0);
        let path = simulate_chain(&m, 500, 50, &mut rng);
        let w = Window::new(-0.3, 0.4);
        let row = build_row(&path, &m.jump_law(), w);
        let entries = path.states[..500]
            .iter()
            .filter(|&&x| w.contains(x))
            .count();
        assert_eq!(row.nonzero, entries);
        assert_eq!(row.sum, entries as f64);
        // re-summed identity
        let resum: f64 = row.values.iter().sum();
        assert_eq!(resum, row.sum);
    }

    #[test]
    fn row_mean_matches_exact_window_probability() {
        // h = 0: P(X in [0, 1/n]) = Phi(1/n) - Phi(0) exactly
        let m = model(Drift::Zero, MarkTransform::One);
        let n = 10_000usize;
        let reps = 10_000usize;
        let w = Window::new(0.0, 1.0 / n as f64);
        let jump = m.jump_law();
        let sums: Vec<f64> = (0..reps)
            .map(|k| {
                let mut rng = stream_for(3, k as u64);
                let path = simulate_chain(&m, n, 5, &mut rng);
                build_row(&path, &jump, w).sum
            })
            .collect();
        let mean: f64 = sums.iter().sum::<f64>() / reps as f64;
        let p = m.innovation.cdf(1.0 / n as f64) - m.innovation.cdf(0.0);
        let expected = n as f64 * p;
        // S_n is ~Binomial(n, p): Var ~ n p
        let se = (expected / reps as f64).sqrt();
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "mean {mean} vs {expected} (3se {:.3e})",
            3.0 * se
        );
    }

    #[test]
    fn scaled_moments_bounded_across_n() {
        let m = model(Drift::Linear { rho: 0.5 }, MarkTransform::One);
        let jump = m.jump_law();
        let mut scaled = Vec::new();
        for (ni, &n) in [100usize, 1000, 10_000].iter().enumerate() {
            let reps = 2000usize;
            let w = Window::new(0.0, 1.0 / n as f64);
            let mut acc = 0.0;
            for k in 0..reps {
                let mut rng = stream_for(40 + ni as u64, k as u64);
                let path = simulate_chain(&m, n, 120, &mut rng);
                let row = build_row(&path, &jump, w);
                acc += row.nonzero as f64 / n as f64;
            }
            scaled.push(n as f64 * acc / reps as f64);
        }
        let max = scaled.iter().cloned().fold(f64::MIN, f64::max);
        let min = scaled.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min <= 2.0, "scaled one-point moments {scaled:?}");
    }

    #[test]
    fn audit_zero_drift_unit_marks_clean() {
        let m = model(Drift::Zero, MarkTransform::One);
        let mut cfg = AuditConfig::new(100, 50);
        cfg.reps = Some(20_000);
        let audit = moment_audit(&m, &cfg).unwrap();
        assert!(!audit.has_violation(), "violations: {:?}", audit.violations);
        let prob = &audit.estimates[0];
        assert!(prob.value <= m.innovation.sup_norm());
        assert!(audit.c1_implied >= 1.0);
    }

    #[test]
    fn audit_null_transform_is_all_zero() {
        let m = model(
            Drift::Linear { rho: 0.5 },
            MarkTransform::Affine {
                slope: 0.0,
                offset: 0.0,
            },
        );
        let mut cfg = AuditConfig::new(50, 51);
        cfg.reps = Some(3000);
        let audit = moment_audit(&m, &cfg).unwrap();
        assert!(!audit.has_violation());
        for est in audit.estimates.iter().filter(|e| e.name != "n2_cf_defect") {
            assert_eq!(est.value, 0.0, "{} should be exactly zero", est.name);
        }
    }

    #[test]
    fn audit_flags_insufficient_hits() {
        // a huge innovation scale makes the window probability ~4e-12 per
        // step; 3 short replications cannot hit it
        let m = ArModel::new(
            Drift::Zero,
            InnovationDensity::gaussian(1e9).unwrap(),
            MarkTransform::One,
        )
        .unwrap();
        let mut cfg = AuditConfig::new(100, 52);
        cfg.reps = Some(3);
        let err = moment_audit(&m, &cfg).unwrap_err();
        assert!(
            matches!(err, TriangularError::InsufficientHits { .. }),
            "got {err:?}"
        );
    }
}
