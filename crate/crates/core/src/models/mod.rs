//! Hierarchical model assembly: an empirical-likelihood (or parametric
//! comparator) data stage, a latent spatial process and proper priors.

mod context;
mod priors;

pub use context::{GpFactor, Kernel, LikEval, ModelContext, Structure};
pub use priors::HyperPrior;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::el::{ElError, EquationFamily, Link};
use crate::spatial::{QPolicy, SpatialError};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("Gaussian estimating equations need known sampling variances")]
    MissingSamplingVariances,
    #[error("process prior needs {0} spatial information")]
    MissingSpatialStructure(&'static str),
    #[error("improper or invalid prior: {0}")]
    ImproperPrior(String),
    #[error("counts must be non-negative (row {0})")]
    NegativeCount(usize),
    #[error("held-out index {index} out of range for n = {n}")]
    HeldOutOutOfRange { index: usize, n: usize },
    #[error("state has {found} entries in {block}, expected {expected}")]
    StateDimension {
        block: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("log-link exponent exceeds the overflow limit")]
    Overflow,
    #[error(transparent)]
    El(#[from] ElError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

/// Which likelihood the data stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataModel {
    #[default]
    EmpiricalLikelihood,
    /// Exact Gaussian (known `σᵢ²`) or Poisson likelihood.
    Parametric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessPrior {
    /// Reduced ICAR on the Moran basis with precision `τ M'(B₊ − B)M`.
    MoranIcar {
        tau: HyperPrior,
    },
    /// Gaussian process with covariance `σ_y² exp(−d/φ)`.
    ExpGp {
        sigma2: HyperPrior,
        phi: HyperPrior,
    },
    /// `yᵢ ~ N(0, A)` independently.
    Independence {
        variance: HyperPrior,
    },
    None,
}

impl ProcessPrior {
    pub fn hyper_names(&self) -> Vec<&'static str> {
        match self {
            ProcessPrior::MoranIcar { .. } => vec!["tau"],
            ProcessPrior::ExpGp { .. } => vec!["sigma2_y", "phi"],
            ProcessPrior::Independence { .. } => vec!["A"],
            ProcessPrior::None => vec![],
        }
    }

    pub fn hyper_priors(&self) -> Vec<HyperPrior> {
        match *self {
            ProcessPrior::MoranIcar { tau } => vec![tau],
            ProcessPrior::ExpGp { sigma2, phi } => vec![sigma2, phi],
            ProcessPrior::Independence { variance } => vec![variance],
            ProcessPrior::None => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaPrior {
    /// `β ~ N(β*, (g·s)⁻¹ I)`, centred at the WLS estimate `β*`, where `s` is
    /// the process precision scale (`τ`, `1/A`, `1/σ_y²`, or 1 without a process).
    Zellner { g: f64 },
    /// Independent `N(meanₖ, sd²)`; zero mean when `mean` is omitted.
    Gaussian {
        sd: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
    },
}

impl Default for BetaPrior {
    fn default() -> Self {
        BetaPrior::Zellner { g: 10.0 }
    }
}

fn default_true() -> bool {
    true
}

/// A complete model: data stage, latent process and priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub family: EquationFamily,
    #[serde(default)]
    pub data_model: DataModel,
    pub process: ProcessPrior,
    pub beta_prior: BetaPrior,
    #[serde(default)]
    pub basis: QPolicy,
    /// Include the second-moment estimating equation.
    #[serde(default = "default_true")]
    pub variance_equation: bool,
}

impl ModelSpec {
    pub fn link(&self) -> Link {
        match self.family {
            EquationFamily::GaussianFh => Link::Identity,
            EquationFamily::PoissonLink => Link::Log,
        }
    }

    /// Checks that every prior component is a proper density.
    pub fn validate(&self) -> Result<(), ModelError> {
        for h in self.process.hyper_priors() {
            h.validate()?;
        }
        match &self.beta_prior {
            BetaPrior::Zellner { g } if !(*g > 0.0 && g.is_finite()) => {
                Err(ModelError::ImproperPrior(format!("g = {g}")))
            }
            BetaPrior::Gaussian { sd, .. } if !(*sd > 0.0 && sd.is_finite()) => {
                Err(ModelError::ImproperPrior(format!("sd = {sd}")))
            }
            BetaPrior::Gaussian { mean: Some(m), .. } if m.iter().any(|v| !v.is_finite()) => {
                Err(ModelError::ImproperPrior("non-finite prior mean".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Sampler state: fixed effects, latent process and process hyperparameters.
///
/// The process block is `y*` (length `q`) on a lattice, `y` (length `n`) for
/// point-referenced and independence priors, and empty without a process.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<S: Real> {
    pub beta: DVector<S>,
    pub process: DVector<S>,
    pub hyper: Vec<S>,
}
