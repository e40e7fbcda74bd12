//! Simulation and estimation toolkit for windowed sums of autoregressive
//! chains and their compound Poisson limits.
//!
//! The crate is organized around one pipeline:
//!
//! * [`distributions`]: innovation densities (gaussian / laplace / logistic),
//!   jump transforms, and the compound Poisson law with an exact sampler and
//!   analytic characteristic function.
//! * [`markov`]: simulation of additive-noise chains (plain and
//!   threshold-switching drifts), the transfer-operator solver for the
//!   invariant density, and a mixing diagnostic.
//! * [`triangular`]: rows `Y_{n,j} = f(eps_j) 1{X_{j-1} in window}` built
//!   from simulated paths, their sums, and a Monte Carlo audit of the moment
//!   and dependence bounds the limit theory relies on.
//! * [`metrics`]: the Lévy distance between CDFs, empirical characteristic
//!   functions, the Zolotarev smoothing bound, the closed-form rate bound,
//!   and the n-sweep rate study.
//! * [`threshold`]: the estimation pipeline for the switching threshold:
//!   exact likelihood, localized likelihood ratios, the Bayes estimator with
//!   exact piecewise integration, the limiting jump process, and the
//!   finite-n vs limit comparison study.
//!
//! Everything is deterministic given a master seed: replications derive their
//! own ChaCha streams from `(seed, index)` via [`rng::stream_for`], so results
//! do not depend on worker count.

pub mod distributions;
pub mod markov;
pub mod metrics;
pub mod quad;
pub mod report;
pub mod rng;
pub mod threshold;
pub mod triangular;

// the characteristic-function surfaces speak this type
pub use num_complex;

pub use distributions::{
    CompoundPoissonLaw, InnovationDensity, InnovationFamily, JumpLaw, MarkTransform,
};
pub use markov::{ArModel, ChainPath, Drift, GridSpec, InvariantDensity, RegimeFn, TarModel};
pub use metrics::{EmpiricalLaw, RateBoundParams, RateStudyConfig, RateStudyReport};
pub use threshold::{BayesEstimate, LikelihoodRatioProcess, Prior};
pub use triangular::{TriangularRow, Window};
