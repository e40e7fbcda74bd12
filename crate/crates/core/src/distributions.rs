//! Innovation densities, jump transforms, and the compound Poisson law.
//!
//! The three innovation families are everywhere-positive, Lipschitz, bounded
//! densities with a finite first absolute moment; each ships a closed-form
//! sampler, CDF, characteristic function, Lipschitz constant and sup-norm. A
//! [`JumpLaw`] is a mark transform applied to an innovation draw; a
//! [`CompoundPoissonLaw`] pairs an intensity with a jump law and owns both an
//! exact sampler and the analytic characteristic function
//! `psi(t) = exp(mu * (phi(t) - 1))`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::{adaptive_simpson_with_breaks, QuadError};

pub(crate) const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

#[derive(Debug, Error)]
pub enum DistributionError {
    #[error("scale parameter must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("intensity must be positive and finite, got {0}")]
    BadIntensity(f64),
    #[error("characteristic-function quadrature did not converge: {0}")]
    Quadrature(#[from] QuadError),
}

/// Supported innovation families. All are symmetric about zero with a scale
/// parameter, so they satisfy the positivity / Lipschitz / boundedness and
/// finite-first-moment requirements of the limit theory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnovationFamily {
    Gaussian,
    Laplace,
    Logistic,
}

/// An innovation density `q` with family tag and scale `sigma > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnovationDensity {
    family: InnovationFamily,
    sigma: f64,
}

impl InnovationDensity {
    pub fn new(family: InnovationFamily, sigma: f64) -> Result<Self, DistributionError> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(DistributionError::BadScale(sigma));
        }
        Ok(Self { family, sigma })
    }

    pub fn gaussian(sigma: f64) -> Result<Self, DistributionError> {
        Self::new(InnovationFamily::Gaussian, sigma)
    }

    pub fn laplace(sigma: f64) -> Result<Self, DistributionError> {
        Self::new(InnovationFamily::Laplace, sigma)
    }

    pub fn logistic(sigma: f64) -> Result<Self, DistributionError> {
        Self::new(InnovationFamily::Logistic, sigma)
    }

    pub fn family(&self) -> InnovationFamily {
        self.family
    }

    pub fn scale(&self) -> f64 {
        self.sigma
    }

    /// Density value `q(x)`.
    pub fn density(&self, x: f64) -> f64 {
        let s = self.sigma;
        match self.family {
            InnovationFamily::Gaussian => {
                let z = x / s;
                (-0.5 * z * z).exp() / (s * SQRT_2PI)
            }
            InnovationFamily::Laplace => 0.5 / s * (-(x.abs()) / s).exp(),
            InnovationFamily::Logistic => self.log_density(x).exp(),
        }
    }

    /// `ln q(x)`, stable for large |x|.
    pub fn log_density(&self, x: f64) -> f64 {
        let s = self.sigma;
        match self.family {
            InnovationFamily::Gaussian => {
                let z = x / s;
                -0.5 * z * z - (s * SQRT_2PI).ln()
            }
            InnovationFamily::Laplace => -x.abs() / s - (2.0 * s).ln(),
            InnovationFamily::Logistic => {
                let a = x.abs() / s;
                -a - s.ln() - 2.0 * (-a).exp().ln_1p()
            }
        }
    }

    /// CDF of the innovation law.
    pub fn cdf(&self, x: f64) -> f64 {
        let s = self.sigma;
        match self.family {
            InnovationFamily::Gaussian => 0.5 * libm::erfc(-x / (s * std::f64::consts::SQRT_2)),
            InnovationFamily::Laplace => {
                if x < 0.0 {
                    0.5 * (x / s).exp()
                } else {
                    1.0 - 0.5 * (-x / s).exp()
                }
            }
            InnovationFamily::Logistic => 1.0 / (1.0 + (-x / s).exp()),
        }
    }

    /// Exact draw from the innovation law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let s = self.sigma;
        match self.family {
            InnovationFamily::Gaussian => s * rng.sample::<f64, _>(StandardNormal),
            InnovationFamily::Laplace => {
                let u: f64 = rng.gen();
                let v = u - 0.5;
                let inner = (1.0 - 2.0 * v.abs()).max(f64::MIN_POSITIVE);
                -s * v.signum() * inner.ln()
            }
            InnovationFamily::Logistic => {
                let u: f64 = rng.gen::<f64>().clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
                s * (u / (1.0 - u)).ln()
            }
        }
    }

    /// `sup_x q(x)`; all three families peak at the origin.
    pub fn sup_norm(&self) -> f64 {
        let s = self.sigma;
        match self.family {
            InnovationFamily::Gaussian => 1.0 / (s * SQRT_2PI),
            InnovationFamily::Laplace => 0.5 / s,
            InnovationFamily::Logistic => 0.25 / s,
        }
    }

    /// Global Lipschitz constant of `q`: `sup |q'|` (for laplace the sup over
    /// the smooth branches, which bounds all difference quotients).
    pub fn lipschitz_constant(&self) -> f64 {
        let s = self.sigma;
        match self.family {
            InnovationFamily::Gaussian => (-0.5f64).exp() / (s * s * SQRT_2PI),
            InnovationFamily::Laplace => 0.5 / (s * s),
            InnovationFamily::Logistic => 1.0 / (6.0 * 3.0f64.sqrt() * s * s),
        }
    }

    /// First absolute moment `∫ |x| q(x) dx`.
    pub fn mean_abs(&self) -> f64 {
        let s = self.sigma;
        match self.family {
            InnovationFamily::Gaussian => s * (2.0 / std::f64::consts::PI).sqrt(),
            InnovationFamily::Laplace => s,
            InnovationFamily::Logistic => 2.0 * s * std::f64::consts::LN_2,
        }
    }

    /// Characteristic function of the innovation (real: the law is symmetric).
    pub fn char_fn(&self, t: f64) -> f64 {
        let s = self.sigma;
        match self.family {
            InnovationFamily::Gaussian => (-0.5 * s * s * t * t).exp(),
            InnovationFamily::Laplace => 1.0 / (1.0 + s * s * t * t),
            InnovationFamily::Logistic => {
                let a = std::f64::consts::PI * s * t;
                if a.abs() < 1e-8 {
                    1.0 - a * a / 6.0
                } else {
                    a / a.sinh()
                }
            }
        }
    }

    /// Truncation radius for quadrature against this density: the tail mass
    /// beyond it is far below the 1e-10 quadrature tolerance. Exponential
    /// tails need a much wider window than the gaussian.
    pub(crate) fn integration_radius(&self) -> f64 {
        match self.family {
            InnovationFamily::Gaussian => 12.0 * self.sigma,
            InnovationFamily::Laplace | InnovationFamily::Logistic => 40.0 * self.sigma,
        }
    }

    /// Kinks of `ln q` (quadrature split points).
    fn log_density_kinks(&self) -> Vec<f64> {
        match self.family {
            InnovationFamily::Laplace => vec![0.0],
            _ => Vec::new(),
        }
    }
}

/// Mark transform `f` applied to an innovation draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarkTransform {
    /// `f ≡ 1`: the sum counts window entries and the limit is plain Poisson.
    One,
    /// `f(x) = slope·x + offset`.
    Affine { slope: f64, offset: f64 },
    /// `f(x) = ln q(x + shift) - ln q(x)` for the owning innovation density.
    LogRatio { shift: f64 },
}

/// A jump law: mark transform plus the underlying innovation density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpLaw {
    pub transform: MarkTransform,
    pub innovation: InnovationDensity,
}

const CF_QUAD_TOL: f64 = 1e-10;

impl JumpLaw {
    pub fn new(transform: MarkTransform, innovation: InnovationDensity) -> Self {
        Self {
            transform,
            innovation,
        }
    }

    /// `f(x)`.
    pub fn apply(&self, x: f64) -> f64 {
        match self.transform {
            MarkTransform::One => 1.0,
            MarkTransform::Affine { slope, offset } => slope * x + offset,
            MarkTransform::LogRatio { shift } => {
                self.innovation.log_density(x + shift) - self.innovation.log_density(x)
            }
        }
    }

    /// Draw `f(eps)` with `eps ~ q`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let eps = self.innovation.sample(rng);
        self.apply(eps)
    }

    fn quad_radius(&self) -> f64 {
        let margin = match self.transform {
            MarkTransform::LogRatio { shift } => shift.abs(),
            _ => 0.0,
        };
        self.innovation.integration_radius() + margin
    }

    fn quad_kinks(&self) -> Vec<f64> {
        let mut kinks = self.innovation.log_density_kinks();
        if let MarkTransform::LogRatio { shift } = self.transform {
            for k in self.innovation.log_density_kinks() {
                kinks.push(k - shift);
            }
        }
        kinks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        kinks.dedup();
        kinks
    }

    /// Jump characteristic function `phi(t) = E exp(i t f(eps))`, analytic
    /// where the transform admits it and by adaptive quadrature otherwise.
    /// Exactly `1` at `t = 0`.
    pub fn char_fn(&self, t: f64) -> Result<Complex64, DistributionError> {
        if t == 0.0 {
            return Ok(Complex64::new(1.0, 0.0));
        }
        match self.transform {
            MarkTransform::One => Ok(Complex64::new(t.cos(), t.sin())),
            MarkTransform::Affine { slope, offset } => {
                let base = self.innovation.char_fn(slope * t);
                let rot = Complex64::new((offset * t).cos(), (offset * t).sin());
                Ok(rot * base)
            }
            MarkTransform::LogRatio { .. } => {
                let r = self.quad_radius();
                let kinks = self.quad_kinks();
                let q = self.innovation;
                let law = *self;
                let re = adaptive_simpson_with_breaks(
                    &|x| (t * law.apply(x)).cos() * q.density(x),
                    -r,
                    r,
                    &kinks,
                    CF_QUAD_TOL,
                )?;
                let im = adaptive_simpson_with_breaks(
                    &|x| (t * law.apply(x)).sin() * q.density(x),
                    -r,
                    r,
                    &kinks,
                    CF_QUAD_TOL,
                )?;
                Ok(Complex64::new(re, im))
            }
        }
    }

    /// `d/dt phi(t) = i E[f(eps) exp(i t f(eps))]`.
    pub fn char_fn_derivative(&self, t: f64) -> Result<Complex64, DistributionError> {
        if let MarkTransform::One = self.transform {
            return Ok(Complex64::new(0.0, 1.0) * Complex64::new(t.cos(), t.sin()));
        }
        let r = self.quad_radius();
        let kinks = self.quad_kinks();
        let q = self.innovation;
        let law = *self;
        let re = adaptive_simpson_with_breaks(
            &|x| {
                let f = law.apply(x);
                f * (t * f).cos() * q.density(x)
            },
            -r,
            r,
            &kinks,
            CF_QUAD_TOL,
        )?;
        let im = adaptive_simpson_with_breaks(
            &|x| {
                let f = law.apply(x);
                f * (t * f).sin() * q.density(x)
            },
            -r,
            r,
            &kinks,
            CF_QUAD_TOL,
        )?;
        Ok(Complex64::new(0.0, 1.0) * Complex64::new(re, im))
    }

    /// `E f(eps)`; closed form for constant and affine marks (the innovation
    /// families are symmetric about zero), quadrature otherwise.
    pub fn mean_jump(&self) -> Result<f64, DistributionError> {
        match self.transform {
            MarkTransform::One => Ok(1.0),
            MarkTransform::Affine { offset, .. } => Ok(offset),
            MarkTransform::LogRatio { .. } => {
                let r = self.quad_radius();
                let kinks = self.quad_kinks();
                let q = self.innovation;
                let law = *self;
                Ok(adaptive_simpson_with_breaks(
                    &|x| law.apply(x) * q.density(x),
                    -r,
                    r,
                    &kinks,
                    CF_QUAD_TOL,
                )?)
            }
        }
    }

    /// `E |f(eps)|` by quadrature, splitting at the zeros of `f`.
    pub fn mean_abs_jump(&self) -> Result<f64, DistributionError> {
        match self.transform {
            MarkTransform::One => Ok(1.0),
            _ => {
                let mut kinks = self.quad_kinks();
                match self.transform {
                    MarkTransform::Affine { slope, offset } if slope != 0.0 => {
                        kinks.push(-offset / slope)
                    }
                    // symmetric unimodal q: the log ratio vanishes at -shift/2
                    MarkTransform::LogRatio { shift } => kinks.push(-shift / 2.0),
                    _ => {}
                }
                let r = self.quad_radius();
                let q = self.innovation;
                let law = *self;
                Ok(adaptive_simpson_with_breaks(
                    &|x| law.apply(x).abs() * q.density(x),
                    -r,
                    r,
                    &kinks,
                    CF_QUAD_TOL,
                )?)
            }
        }
    }
}

/// Compound Poisson law: jump intensity plus a jump law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundPoissonLaw {
    intensity: f64,
    pub jump: JumpLaw,
}

impl CompoundPoissonLaw {
    pub fn new(intensity: f64, jump: JumpLaw) -> Result<Self, DistributionError> {
        if intensity <= 0.0 || !intensity.is_finite() {
            return Err(DistributionError::BadIntensity(intensity));
        }
        Ok(Self { intensity, jump })
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    /// One exact draw: `N ~ Poisson(mu)` jumps, summed; exactly `0.0` when
    /// `N = 0`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n = poisson_count(self.intensity, rng);
        let mut s = 0.0;
        for _ in 0..n {
            s += self.jump.sample(rng);
        }
        s
    }

    /// `psi(t) = exp(mu (phi(t) - 1))`; exactly `1` at `t = 0`.
    pub fn char_fn(&self, t: f64) -> Result<Complex64, DistributionError> {
        let phi = self.jump.char_fn(t)?;
        Ok(((phi - Complex64::new(1.0, 0.0)) * self.intensity).exp())
    }

    /// `E S = mu · E f(eps)` (Wald identity).
    pub fn mean(&self) -> Result<f64, DistributionError> {
        Ok(self.intensity * self.jump.mean_jump()?)
    }
}

/// Exact Poisson count by Knuth's uniform-product method.
pub fn poisson_count<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u64 {
    debug_assert!(mu > 0.0 && mu.is_finite());
    let l = (-mu).exp();
    let mut k: u64 = 0;
    let mut p: f64 = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= l {
            return k;
        }
        k += 1;
    }
}

/// `P(k = j)` for `j` up to `k`, via the multiplicative recursion
/// `p_{j+1} = p_j mu / (j+1)` (no factorial overflow).
pub fn poisson_pmf(mu: f64, k: u64) -> f64 {
    assert!(mu > 0.0 && mu.is_finite(), "poisson_pmf needs mu > 0");
    let mut p = (-mu).exp();
    for j in 0..k {
        p *= mu / (j + 1) as f64;
    }
    p
}

/// Poisson CDF at a real point: `sum_{k <= floor(x)} e^{-mu} mu^k / k!`,
/// `0` for `x < 0`.
pub fn poisson_cdf(mu: f64, x: f64) -> f64 {
    assert!(mu > 0.0 && mu.is_finite(), "poisson_cdf needs mu > 0");
    if x < 0.0 {
        return 0.0;
    }
    let kmax = x.floor() as u64;
    let mut term = (-mu).exp();
    let mut acc = term;
    for j in 0..kmax {
        term *= mu / (j + 1) as f64;
        acc += term;
    }
    acc.min(1.0)
}
