use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CommandError, DatasetSpec};
use crate::el::ElConfig;
use crate::harness::{DatasetTemplate, ExperimentPlan, GeneratorConfig, Prediction};
use crate::mcmc::SamplerConfig;
use crate::models::ModelSpec;
use crate::spatial::QPolicy;

fn default_name() -> String {
    "run".into()
}

/// Synthetic-data design for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub template: DatasetTemplate,
    pub generator: GeneratorConfig,
    pub n_replicates: usize,
}

/// One JSON document driving every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub el: ElConfig,
    /// Master seed; every chain seed is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub prediction: Prediction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
    /// Eigenvector policy for `basis`; the first model's policy when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<QPolicy>,
}

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub models: Option<Vec<String>>,
    pub folds: Option<Vec<usize>>,
    pub no_intercept: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CommandError> {
        serde_json::from_str(text).map_err(|e| CommandError::Config(format!("config: {e}")))
    }

    /// Parses a config file; relative dataset paths resolve against its directory.
    pub fn from_path(path: &Path) -> Result<Self, CommandError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CommandError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            CommandError::Config(m) => CommandError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = cfg.dataset.as_mut() {
            d.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CommandError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(names) = &o.models {
            if let Some(bad) = names
                .iter()
                .find(|n| !self.models.iter().any(|m| &m.name == *n))
            {
                return Err(CommandError::Config(format!(
                    "--models: no model named {bad:?}"
                )));
            }
            self.models.retain(|m| names.contains(&m.name));
        }
        if let Some(folds) = &o.folds {
            self.folds = Some(folds.clone());
        }
        if o.no_intercept {
            if super::uses_moran(&self.models) {
                return Err(CommandError::Config(
                    "--no-intercept cannot be used with a Moran-ICAR model".into(),
                ));
            }
            if let Some(d) = self.dataset.as_mut() {
                d.intercept = false;
            }
        }
        Ok(())
    }

    /// Checks every model and the sampler before any computation starts.
    pub fn validate(&self) -> Result<(), CommandError> {
        let mut names = std::collections::HashSet::new();
        for m in &self.models {
            if !names.insert(m.name.as_str()) {
                return Err(CommandError::Config(format!(
                    "duplicate model name {:?}",
                    m.name
                )));
            }
            m.validate()
                .map_err(|e| CommandError::Config(format!("model {:?}: {e}", m.name)))?;
        }
        self.sampler
            .validate()
            .map_err(|e| CommandError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn require_dataset(&self) -> Result<&DatasetSpec, CommandError> {
        self.dataset
            .as_ref()
            .ok_or_else(|| CommandError::Config("config has no dataset block".into()))
    }

    pub fn require_models(&self) -> Result<&[ModelSpec], CommandError> {
        if self.models.is_empty() {
            return Err(CommandError::Config("model roster is empty".into()));
        }
        Ok(&self.models)
    }

    pub fn to_plan(&self) -> Result<ExperimentPlan, CommandError> {
        let sim = self
            .simulation
            .as_ref()
            .ok_or_else(|| CommandError::Config("config has no simulation block".into()))?;
        Ok(ExperimentPlan {
            name: self.name.clone(),
            template: sim.template.clone(),
            generator: sim.generator.clone(),
            n_replicates: sim.n_replicates,
            roster: self.require_models()?.to_vec(),
            sampler: self.sampler.clone(),
            el: self.el,
            master_seed: self.seed,
            prediction: self.prediction,
            folds: self.folds.clone(),
        })
    }

    /// Config for a shipped study design.
    pub fn from_plan(plan: &ExperimentPlan) -> Self {
        Self {
            name: plan.name.clone(),
            dataset: None,
            models: plan.roster.clone(),
            sampler: plan.sampler.clone(),
            el: plan.el,
            seed: plan.master_seed,
            out: None,
            prediction: plan.prediction,
            folds: plan.folds.clone(),
            simulation: Some(SimulationSpec {
                template: plan.template.clone(),
                generator: plan.generator.clone(),
                n_replicates: plan.n_replicates,
            }),
            basis: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::study1_plan;

    const MINIMAL: &str = r#"{
        "dataset": {"data": "d.csv", "edges": "e.txt"},
        "models": [{
            "name": "shel",
            "family": "gaussian_fh",
            "process": {"moran_icar": {"tau": {"gamma": {"shape": 1, "rate": 1}}}},
            "beta_prior": {"zellner": {"g": 10}}
        }]
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.sampler, SamplerConfig::default());
        assert_eq!(cfg.seed, 0);
        cfg.validate().unwrap();
    }

    #[test]
    fn missing_prior_block_is_a_config_error() {
        let text = MINIMAL.replace(
            r#""beta_prior": {"zellner": {"g": 10}}"#,
            r#""basis": "all_positive""#,
        );
        assert_ne!(text, MINIMAL);
        assert!(matches!(
            RunConfig::from_json(&text),
            Err(CommandError::Config(_))
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replacen('{', r#"{"colour": 1,"#, 1);
        assert!(matches!(
            RunConfig::from_json(&text),
            Err(CommandError::Config(_))
        ));
    }

    #[test]
    fn overrides_filter_the_roster() {
        let mut cfg = RunConfig::from_plan(&study1_plan(2));
        let o = Overrides {
            seed: Some(9),
            models: Some(vec!["independence".into()]),
            folds: Some(vec![0, 1]),
            ..Overrides::default()
        };
        cfg.apply(&o).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.models.len(), 1);
        assert_eq!(cfg.to_plan().unwrap().folds, Some(vec![0, 1]));
        let bad = Overrides {
            models: Some(vec!["nope".into()]),
            ..Overrides::default()
        };
        assert!(matches!(cfg.apply(&bad), Err(CommandError::Config(_))));
    }

    #[test]
    fn plan_round_trips_through_config() {
        let plan = study1_plan(3);
        assert_eq!(RunConfig::from_plan(&plan).to_plan().unwrap(), plan);
    }
}
