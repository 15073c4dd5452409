//! Metropolis-Hastings-within-Gibbs sampler for the hierarchical models:
//! blocked random-walk updates of the latent process, a joint update of the
//! fixed effects and scalar updates of the process hyperparameters, with
//! EL-infeasible proposals rejected outright.

mod persist;
mod sampler;
mod summary;

pub use persist::{chain_sidecar, read_chain_csv, write_chain_csv, write_summary_csv};
pub use sampler::{
    hyper_log_ratio, initial_proposals, initialize, run_chain, run_chain_from, update_beta,
    update_hyper, update_level, update_y_blocks, BlockProposal, ChainState, Move, Proposals,
};
pub use summary::{posterior_summary, summarize, SummaryRow};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ModelError;

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_pilot_iters")]
    pub iters: usize,
    /// Multiplier on the pilot covariance; `2.38²/d` for a block of dimension
    /// `d` when absent.
    #[serde(default)]
    pub inflation: Option<f64>,
}

fn default_pilot_iters() -> usize {
    2000
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            iters: default_pilot_iters(),
            inflation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    #[serde(default = "default_n_burn")]
    pub n_burn: usize,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default)]
    pub pilot: PilotConfig,
    #[serde(default)]
    pub seed: u64,
    /// Plain random walk on the raw hyperparameter scale instead of the log
    /// scale, and no level-shift moves.
    #[serde(default)]
    pub plain_random_walk: bool,
    /// Re-check the simplex conditions on every recorded state.
    #[serde(default)]
    pub audit_feasibility: bool,
    /// Initial random-walk standard deviation for latent-process coordinates.
    #[serde(default = "default_initial_step")]
    pub initial_step: f64,
}

fn default_n_iter() -> usize {
    11000
}
fn default_n_burn() -> usize {
    1000
}
fn default_block_size() -> usize {
    15
}
fn default_initial_step() -> f64 {
    0.1
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iter: default_n_iter(),
            n_burn: default_n_burn(),
            block_size: default_block_size(),
            pilot: PilotConfig::default(),
            seed: 0,
            plain_random_walk: false,
            audit_feasibility: false,
            initial_step: default_initial_step(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), McmcError> {
        let bad = |msg: &str| Err(McmcError::InvalidConfig(msg.into()));
        if self.n_burn >= self.n_iter {
            return bad("n_burn must be smaller than n_iter");
        }
        if self.block_size == 0 {
            return bad("block_size must be at least 1");
        }
        if self.pilot.enabled && self.pilot.iters < 4 {
            return bad("pilot.iters must be at least 4");
        }
        if let Some(f) = self.pilot.inflation {
            if !(f > 0.0 && f.is_finite()) {
                return bad("pilot.inflation must be positive");
            }
        }
        if !(self.initial_step >= 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be non-negative");
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        self.n_iter - self.n_burn
    }
}

#[derive(Debug, Error)]
pub enum McmcError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("no feasible starting point: {0}")]
    NoFeasibleStart(String),
    #[error("log posterior became non-finite at iteration {iteration}")]
    ChainDiverged {
        iteration: usize,
        partial: Box<ChainOutput>,
    },
    #[error("chain has no samples")]
    EmptyChain,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStats {
    pub name: String,
    pub proposed: usize,
    pub accepted: usize,
    /// Proposals rejected because the EL weights left the simplex.
    pub infeasible: usize,
}

impl BlockStats {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            proposed: 0,
            accepted: 0,
            infeasible: 0,
        }
    }

    pub fn record(&mut self, mv: Move) {
        self.proposed += 1;
        match mv {
            Move::Accepted => self.accepted += 1,
            Move::Infeasible => self.infeasible += 1,
            Move::Rejected => {}
        }
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityAudit {
    pub checked: usize,
    pub passed: usize,
}

/// Post-burn-in draws. Rows are iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub names: Vec<String>,
    pub samples: DMatrix<f64>,
    /// Mean parameter `θ` at every location, held-out ones included.
    pub theta: DMatrix<f64>,
    pub log_posterior: Vec<f64>,
    pub blocks: Vec<BlockStats>,
    pub infeasible: usize,
    pub audit: Option<FeasibilityAudit>,
}

impl ChainOutput {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.samples.column(k).iter().copied().collect())
    }

    pub fn theta_mean(&self) -> DVector<f64> {
        let rows = self.theta.nrows().max(1) as f64;
        DVector::from_iterator(
            self.theta.ncols(),
            self.theta.column_iter().map(|c| c.sum() / rows),
        )
    }

    pub fn theta_median(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.theta.ncols(),
            self.theta.column_iter().map(|c| {
                let mut v: Vec<f64> = c.iter().copied().collect();
                v.sort_by(f64::total_cmp);
                crate::linalg::quantile_sorted(&v, 0.5)
            }),
        )
    }
}
