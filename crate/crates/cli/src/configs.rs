//! Serializable experiment configurations: one JSON document per run, echoed
//! into every output file together with its hash. CLI flags mirror the
//! fields; a `--config` file supplies the base and flags override it.

use cplim_core::distributions::{InnovationDensity, MarkTransform};
use cplim_core::markov::{ArModel, Drift, GridSpec, RegimeFn, TarModel};
use cplim_core::threshold::Prior;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArModelConfig {
    pub family: String,
    pub sigma: f64,
    pub drift: String,
    pub rho: f64,
    pub clip: f64,
    pub mark: String,
    pub mark_slope: f64,
    pub mark_offset: f64,
    pub mark_shift: f64,
}

impl Default for ArModelConfig {
    fn default() -> Self {
        Self {
            family: "gaussian".into(),
            sigma: 1.0,
            drift: "linear".into(),
            rho: 0.5,
            clip: 5.0,
            mark: "one".into(),
            mark_slope: 1.0,
            mark_offset: 0.0,
            mark_shift: 1.0,
        }
    }
}

pub fn innovation(family: &str, sigma: f64) -> Result<InnovationDensity, CliError> {
    let make = match family {
        "gaussian" => InnovationDensity::gaussian,
        "laplace" => InnovationDensity::laplace,
        "logistic" => InnovationDensity::logistic,
        other => return Err(config_err(format!("unknown innovation family `{other}`"))),
    };
    make(sigma).map_err(|e| config_err(e.to_string()))
}

impl ArModelConfig {
    pub fn build(&self) -> Result<ArModel, CliError> {
        let q = innovation(&self.family, self.sigma)?;
        let drift = match self.drift.as_str() {
            "zero" => Drift::Zero,
            "linear" => Drift::Linear { rho: self.rho },
            "clipped" => Drift::ClippedLinear {
                rho: self.rho,
                bound: self.clip,
            },
            other => return Err(config_err(format!("unknown drift `{other}`"))),
        };
        let mark = match self.mark.as_str() {
            "one" => MarkTransform::One,
            "affine" => MarkTransform::Affine {
                slope: self.mark_slope,
                offset: self.mark_offset,
            },
            "log_ratio" => MarkTransform::LogRatio {
                shift: self.mark_shift,
            },
            other => return Err(config_err(format!("unknown mark transform `{other}`"))),
        };
        ArModel::new(drift, q, mark).map_err(|e| config_err(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TarModelConfig {
    pub family: String,
    pub sigma: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
    pub intercept_plus: f64,
    pub intercept_minus: f64,
    pub theta0: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for TarModelConfig {
    fn default() -> Self {
        Self {
            family: "gaussian".into(),
            sigma: 1.0,
            rho_plus: 0.5,
            rho_minus: -0.5,
            intercept_plus: 0.5,
            intercept_minus: -0.5,
            theta0: 0.0,
            theta_min: -1.0,
            theta_max: 1.0,
        }
    }
}

impl TarModelConfig {
    pub fn build(&self) -> Result<TarModel, CliError> {
        let q = innovation(&self.family, self.sigma)?;
        TarModel::new(
            RegimeFn::new(self.rho_plus, self.intercept_plus),
            RegimeFn::new(self.rho_minus, self.intercept_minus),
            self.theta0,
            (self.theta_min, self.theta_max),
            q,
        )
        .map_err(|e| config_err(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: String,
    pub ar: ArModelConfig,
    pub tar: TarModelConfig,
    pub n: usize,
    pub burn_in: Option<usize>,
    pub reps: usize,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            model: "ar".into(),
            ar: ArModelConfig::default(),
            tar: TarModelConfig::default(),
            n: 1000,
            burn_in: None,
            reps: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvariantConfig {
    pub model: String,
    pub ar: ArModelConfig,
    pub tar: TarModelConfig,
    pub grid_points: usize,
    pub x_max: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InvariantConfig {
    fn default() -> Self {
        Self {
            model: "ar".into(),
            ar: ArModelConfig::default(),
            tar: TarModelConfig::default(),
            grid_points: 4001,
            x_max: None,
            tol: 1e-9,
            max_iter: 500,
        }
    }
}

impl InvariantConfig {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            x_max: self.x_max,
            points: self.grid_points,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub ar: ArModelConfig,
    pub n: usize,
    pub reps: usize,
    pub bootstrap: usize,
    pub t_points: usize,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            ar: ArModelConfig::default(),
            n: 1000,
            reps: 10_000,
            bootstrap: 50,
            t_points: 200,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub ar: ArModelConfig,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub bootstrap: usize,
    pub t_points: usize,
    pub seed: u64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            ar: ArModelConfig::default(),
            n_grid: vec![100, 300, 1000, 3000],
            reps: 10_000,
            bootstrap: 50,
            t_points: 200,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditCliConfig {
    pub ar: ArModelConfig,
    pub n: usize,
    pub reps: Option<usize>,
    pub ell: u32,
    pub t_max: f64,
    pub t_points: usize,
    pub seed: u64,
}

impl Default for AuditCliConfig {
    fn default() -> Self {
        Self {
            ar: ArModelConfig::default(),
            n: 100,
            reps: None,
            ell: 2,
            t_max: 10.0,
            t_points: 41,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZolConfig {
    pub theoretical: bool,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub mu: f64,
    pub r: f64,
    pub b: f64,
    pub n: u64,
    pub ell: u32,
    pub coefficient: f64,
    // empirical mode
    pub ar: ArModelConfig,
    pub reps: usize,
    pub t_points: usize,
    pub seed: u64,
}

impl Default for ZolConfig {
    fn default() -> Self {
        Self {
            theoretical: true,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            mu: 1.0,
            r: 0.5,
            b: 2.0,
            n: 10_000,
            ell: 2,
            coefficient: 8.0,
            ar: ArModelConfig::default(),
            reps: 10_000,
            t_points: 200,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub tar: TarModelConfig,
    pub n: usize,
    pub reps: usize,
    pub prior: String,
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub u_max: Option<f64>,
    pub grid_points: usize,
    pub x_max: Option<f64>,
    pub seed: u64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            tar: TarModelConfig::default(),
            n: 2000,
            reps: 2000,
            prior: "uniform".into(),
            prior_mean: 0.0,
            prior_sd: 0.5,
            u_max: None,
            grid_points: 4001,
            x_max: None,
            seed: 1,
        }
    }
}

impl ThresholdConfig {
    pub fn prior_value(&self) -> Result<Prior, CliError> {
        match self.prior.as_str() {
            "uniform" => Ok(Prior::Uniform),
            "truncated_gaussian" => Ok(Prior::TruncatedGaussian {
                mean: self.prior_mean,
                sd: self.prior_sd,
            }),
            other => Err(config_err(format!("unknown prior `{other}`"))),
        }
    }
}

/// Load a JSON config file, if given.
pub fn load<T: serde::de::DeserializeOwned>(
    path: Option<&std::path::Path>,
) -> Result<Option<T>, CliError> {
    match path {
        None => Ok(None),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", p.display())))?;
            let cfg = serde_json::from_str(&text)
                .map_err(|e| config_err(format!("cannot parse config {}: {e}", p.display())))?;
            Ok(Some(cfg))
        }
    }
}
