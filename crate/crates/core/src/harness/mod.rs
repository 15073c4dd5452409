//! Simulation studies: synthetic data from an EL-weighted residual bootstrap,
//! leave-one-out MSPE for a roster of models, and cross-replicate scoreboards.

mod generate;
mod loo;
mod presets;

pub use generate::{
    build_reference, build_skeleton, generate_from_el, generate_replicate, DatasetTemplate,
    GeneratorConfig, GeneratorKind, Layout, Outlier, Reference, ReferenceSource, Skeleton,
    TruthProcess,
};
pub use loo::{
    loo_mspe, run_study, study_datasets, FoldFailure, LooOptions, ModelScore, MspeReport,
    Prediction, Scoreboard,
};
pub use presets::{outlier_plan, study1_plan, study2_plan};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::el::ElConfig;
use crate::mcmc::{McmcError, SamplerConfig};
use crate::models::{ModelError, ModelSpec};
use crate::spatial::SpatialError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),
    #[error("could not build a feasible reference after {attempts} attempts")]
    InfeasibleReference { attempts: usize },
    #[error("fold {fold} of model {model} failed: {message}")]
    FoldFailed {
        model: String,
        fold: usize,
        message: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

/// Everything needed to rerun a study bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub template: DatasetTemplate,
    pub generator: GeneratorConfig,
    pub n_replicates: usize,
    pub roster: Vec<ModelSpec>,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub el: ElConfig,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub prediction: Prediction,
    /// Restrict LOO to these locations; all locations when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<Vec<usize>>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.roster.is_empty() {
            return Err(HarnessError::InvalidPlan("model roster is empty".into()));
        }
        for (i, a) in self.roster.iter().enumerate() {
            if self.roster[..i].iter().any(|b| b.name == a.name) {
                return Err(HarnessError::InvalidPlan(format!(
                    "duplicate model name {:?}",
                    a.name
                )));
            }
            a.validate()?;
        }
        if self.n_replicates == 0 {
            return Err(HarnessError::InvalidPlan(
                "n_replicates must be positive".into(),
            ));
        }
        self.sampler.validate()?;
        Ok(())
    }

    pub fn loo_options(&self) -> LooOptions {
        LooOptions {
            sampler: self.sampler.clone(),
            el: self.el,
            master_seed: self.master_seed,
            prediction: self.prediction,
            folds: self.folds.clone(),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic child seed keyed by its parts, independent of job order.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |h, p| splitmix64(h ^ splitmix64(*p)))
}

/// FNV-1a hash of a model's JSON with its name cleared, so renamed copies of
/// one model share seeds.
pub fn spec_key(spec: &ModelSpec) -> u64 {
    let mut anon = spec.clone();
    anon.name.clear();
    let bytes = serde_json::to_vec(&anon).expect("model specs serialize");
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}
