//! Adaptive Simpson quadrature.
//!
//! Used for jump characteristic functions without a closed form, density
//! normalization checks, mean-absolute-jump integrals, and KL divergences.
//! Absolute-tolerance, depth-capped; integrands with kinks pass the kink
//! locations so every panel is smooth.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("adaptive quadrature failed to reach tolerance {tol:e} (worst panel {worst:e})")]
    NoConvergence { tol: f64, worst: f64 },
    #[error("empty or inverted integration interval [{a}, {b}]")]
    BadInterval { a: f64, b: f64 },
}

const MAX_DEPTH: u32 = 48;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    if a > b || a.is_nan() || b.is_nan() {
        return Err(QuadError::BadInterval { a, b });
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 0)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, QuadError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol {
        return Ok(left + right + err / 15.0);
    }
    if depth >= MAX_DEPTH {
        return Err(QuadError::NoConvergence {
            tol,
            worst: err.abs() / 15.0,
        });
    }
    let half = 0.5 * tol;
    let l = recurse(f, a, m, fa, flm, fm, left, half, depth + 1)?;
    let r = recurse(f, m, b, fm, frm, fb, right, half, depth + 1)?;
    Ok(l + r)
}

/// Integrate with interior breakpoints (kinks of the integrand) so each
/// panel handed to the adaptive rule is smooth.
pub fn adaptive_simpson_with_breaks<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
) -> Result<f64, QuadError> {
    let mut cuts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|x| *x > a && *x < b)
        .collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let mut total = 0.0;
    let mut lo = a;
    let pieces = (cuts.len() + 1) as f64;
    for cut in cuts.into_iter().chain(std::iter::once(b)) {
        total += adaptive_simpson(f, lo, cut, tol / pieces)?;
        lo = cut;
    }
    Ok(total)
}
