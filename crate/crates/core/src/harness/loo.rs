use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{build_reference, build_skeleton, generate_replicate, GeneratorKind};
use super::{derive_seed, spec_key, ExperimentPlan, HarnessError};
use crate::data::ObservedDataset;
use crate::el::ElConfig;
use crate::linalg::quantile_sorted;
use crate::mcmc::{run_chain, SamplerConfig};
use crate::models::{ModelContext, ModelSpec, Structure};

const REFERENCE_TAG: u64 = 0x5245_4600;
const GENERATE_TAG: u64 = 0x4745_4E00;

/// Point prediction of a held-out observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    #[default]
    PosteriorMean,
    PosteriorMedian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooOptions {
    pub sampler: SamplerConfig,
    pub el: ElConfig,
    pub master_seed: u64,
    pub prediction: Prediction,
    pub folds: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub message: String,
}

/// Leave-one-out results for one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MspeReport {
    pub model: String,
    pub replicate: usize,
    pub locations: Vec<usize>,
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
    pub squared_errors: Vec<f64>,
    pub failed: Vec<FoldFailure>,
    /// `Σ (zᵢ − ẑ₍₋ᵢ₎)² / n` over the folds; absent if any fold failed.
    pub mspe: Option<f64>,
}

impl MspeReport {
    pub fn is_valid(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Refits every roster model with each location's observation removed and
/// scores the held-out predictions.
pub fn loo_mspe(
    roster: &[ModelSpec],
    data: &ObservedDataset<f64>,
    opts: &LooOptions,
    replicate: usize,
) -> Result<Vec<MspeReport>, HarnessError> {
    Ok(evaluate(roster, &[(replicate, data)], opts)?
        .pop()
        .expect("one dataset in, one report set out"))
}

fn evaluate(
    roster: &[ModelSpec],
    datasets: &[(usize, &ObservedDataset<f64>)],
    opts: &LooOptions,
) -> Result<Vec<Vec<MspeReport>>, HarnessError> {
    if roster.is_empty() {
        return Err(HarnessError::InvalidPlan("model roster is empty".into()));
    }
    let mut structures = Vec::with_capacity(datasets.len());
    let mut folds = Vec::with_capacity(datasets.len());
    for (_, data) in datasets {
        let n = data.n();
        if n < 3 {
            return Err(HarnessError::InvalidPlan(
                "leave-one-out needs n ≥ 3".into(),
            ));
        }
        let f: Vec<usize> = opts.folds.clone().unwrap_or_else(|| (0..n).collect());
        if let Some(bad) = f.iter().find(|i| **i >= n) {
            return Err(HarnessError::InvalidPlan(format!(
                "fold {bad} out of range for n = {n}"
            )));
        }
        folds.push(f);
        let s = roster
            .iter()
            .map(|spec| Structure::build(spec, data).map(Arc::new))
            .collect::<Result<Vec<_>, _>>()?;
        structures.push(s);
    }

    let jobs: Vec<(usize, usize, usize)> = (0..datasets.len())
        .flat_map(|d| {
            let folds = &folds;
            (0..roster.len()).flat_map(move |m| folds[d].iter().map(move |&i| (d, m, i)))
        })
        .collect();
    let results: Vec<Result<f64, String>> = jobs
        .par_iter()
        .map(|&(d, m, i)| {
            let (replicate, data) = datasets[d];
            predict_held_out(
                &roster[m],
                data,
                structures[d][m].clone(),
                i,
                replicate,
                opts,
            )
        })
        .collect();

    let mut out = Vec::with_capacity(datasets.len());
    let mut cursor = 0;
    for (d, (replicate, data)) in datasets.iter().enumerate() {
        let mut reports = Vec::with_capacity(roster.len());
        for spec in roster {
            let mut r = MspeReport {
                model: spec.name.clone(),
                replicate: *replicate,
                locations: vec![],
                observed: vec![],
                predicted: vec![],
                squared_errors: vec![],
                failed: vec![],
                mspe: None,
            };
            for &i in &folds[d] {
                match &results[cursor] {
                    Ok(pred) => {
                        r.locations.push(i);
                        r.observed.push(data.z[i]);
                        r.predicted.push(*pred);
                        r.squared_errors.push((data.z[i] - pred).powi(2));
                    }
                    Err(message) => r.failed.push(FoldFailure {
                        fold: i,
                        message: message.clone(),
                    }),
                }
                cursor += 1;
            }
            if r.failed.is_empty() && !r.squared_errors.is_empty() {
                r.mspe = Some(r.squared_errors.iter().sum::<f64>() / r.squared_errors.len() as f64);
            }
            reports.push(r);
        }
        out.push(reports);
    }
    Ok(out)
}

fn predict_held_out(
    spec: &ModelSpec,
    data: &ObservedDataset<f64>,
    structure: Arc<Structure<f64>>,
    fold: usize,
    replicate: usize,
    opts: &LooOptions,
) -> Result<f64, String> {
    let ctx =
        ModelContext::new(spec, data, structure, &[fold], opts.el).map_err(|e| e.to_string())?;
    let cfg = SamplerConfig {
        seed: derive_seed(
            opts.master_seed,
            &[replicate as u64, fold as u64, spec_key(spec)],
        ),
        ..opts.sampler.clone()
    };
    let chain = run_chain(&ctx, &cfg).map_err(|e| e.to_string())?;
    let col = chain.theta.column(fold);
    Ok(match opts.prediction {
        Prediction::PosteriorMean => col.mean(),
        Prediction::PosteriorMedian => {
            let mut v: Vec<f64> = col.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            quantile_sorted(&v, 0.5)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    /// Mean over replicates whose folds all completed.
    pub mean_mspe: Option<f64>,
    pub per_replicate: Vec<Option<f64>>,
    pub failed_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scoreboard {
    pub plan_echo: serde_json::Value,
    pub per_model: BTreeMap<String, ModelScore>,
    /// `100·(1 − MSPE_a/MSPE_b)` keyed `"a_vs_b"`.
    pub reductions: BTreeMap<String, f64>,
    /// Share of replicates where `a` has the lower MSPE, keyed `"a_vs_b"`.
    pub win_rates: BTreeMap<String, f64>,
    #[serde(skip)]
    pub reports: Vec<Vec<MspeReport>>,
}

impl Scoreboard {
    pub fn from_reports(
        plan_echo: serde_json::Value,
        roster: &[ModelSpec],
        reports: Vec<Vec<MspeReport>>,
    ) -> Self {
        let mut per_model = BTreeMap::new();
        for (k, spec) in roster.iter().enumerate() {
            let per_replicate: Vec<Option<f64>> = reports.iter().map(|r| r[k].mspe).collect();
            let valid: Vec<f64> = per_replicate.iter().flatten().copied().collect();
            per_model.insert(
                spec.name.clone(),
                ModelScore {
                    mean_mspe: (!valid.is_empty())
                        .then(|| valid.iter().sum::<f64>() / valid.len() as f64),
                    per_replicate,
                    failed_folds: reports.iter().map(|r| r[k].failed.len()).sum(),
                },
            );
        }
        let mut reductions = BTreeMap::new();
        let mut win_rates = BTreeMap::new();
        for (a, sa) in roster.iter().enumerate() {
            for (b, sb) in roster.iter().enumerate() {
                if a == b {
                    continue;
                }
                let key = format!("{}_vs_{}", sa.name, sb.name);
                if let (Some(ma), Some(mb)) =
                    (per_model[&sa.name].mean_mspe, per_model[&sb.name].mean_mspe)
                {
                    if mb > 0.0 {
                        reductions.insert(key.clone(), 100.0 * (1.0 - ma / mb));
                    }
                }
                let pairs: Vec<(f64, f64)> = reports
                    .iter()
                    .filter_map(|r| Some((r[a].mspe?, r[b].mspe?)))
                    .collect();
                if !pairs.is_empty() {
                    let wins = pairs.iter().filter(|(x, y)| x < y).count();
                    win_rates.insert(key, wins as f64 / pairs.len() as f64);
                }
            }
        }
        Self {
            plan_echo,
            per_model,
            reductions,
            win_rates,
            reports,
        }
    }

    pub fn mean_mspe(&self, model: &str) -> Option<f64> {
        self.per_model.get(model)?.mean_mspe
    }
}

/// Generates every replicate, runs leave-one-out for the whole roster and
/// aggregates. Replicates, models and folds run in parallel.
pub fn run_study(plan: &ExperimentPlan) -> Result<Scoreboard, HarnessError> {
    plan.validate()?;
    let skel = build_skeleton(&plan.template)?;
    let reference = match plan.generator.kind {
        GeneratorKind::ElBootstrap => Some(build_reference(
            &skel,
            &plan.generator,
            &plan.roster,
            &plan.sampler,
            &plan.el,
            derive_seed(plan.master_seed, &[REFERENCE_TAG]),
        )?),
        GeneratorKind::Parametric => None,
    };
    let datasets = (0..plan.n_replicates)
        .map(|r| {
            generate_replicate(
                &skel,
                &plan.generator,
                reference.as_ref(),
                derive_seed(plan.master_seed, &[GENERATE_TAG, r as u64]),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<(usize, &ObservedDataset<f64>)> = datasets.iter().enumerate().collect();
    let reports = evaluate(&plan.roster, &refs, &plan.loo_options())?;
    let echo = serde_json::to_value(plan).expect("plans serialize");
    Ok(Scoreboard::from_reports(echo, &plan.roster, reports))
}

/// The replicate datasets a plan would generate, for inspection or export.
pub fn study_datasets(plan: &ExperimentPlan) -> Result<Vec<ObservedDataset<f64>>, HarnessError> {
    let skel = build_skeleton(&plan.template)?;
    let reference = match plan.generator.kind {
        GeneratorKind::ElBootstrap => Some(build_reference(
            &skel,
            &plan.generator,
            &plan.roster,
            &plan.sampler,
            &plan.el,
            derive_seed(plan.master_seed, &[REFERENCE_TAG]),
        )?),
        GeneratorKind::Parametric => None,
    };
    (0..plan.n_replicates)
        .map(|r| {
            generate_replicate(
                &skel,
                &plan.generator,
                reference.as_ref(),
                derive_seed(plan.master_seed, &[GENERATE_TAG, r as u64]),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::study1_plan;
    use crate::mcmc::PilotConfig;

    fn quick(mut plan: ExperimentPlan) -> ExperimentPlan {
        plan.sampler = SamplerConfig {
            n_iter: 300,
            n_burn: 100,
            pilot: PilotConfig {
                enabled: true,
                iters: 200,
                inflation: None,
            },
            ..plan.sampler
        };
        plan
    }

    #[test]
    fn mspe_is_the_mean_of_stored_deviations() {
        let mut plan = quick(study1_plan(1));
        plan.folds = Some(vec![0, 7, 13]);
        let board = run_study(&plan).unwrap();
        for r in &board.reports[0] {
            let recomputed = r.squared_errors.iter().sum::<f64>() / r.squared_errors.len() as f64;
            assert!((recomputed - r.mspe.unwrap()).abs() < 1e-12);
            assert_eq!(r.locations, vec![0, 7, 13]);
        }
    }

    #[test]
    fn identical_models_give_identical_folds_and_order_is_irrelevant() {
        let mut plan = quick(study1_plan(1));
        let mut twin = plan.roster[0].clone();
        twin.name = "twin".into();
        plan.roster = vec![plan.roster[0].clone(), twin];
        plan.folds = Some(vec![2, 5]);
        let a = run_study(&plan).unwrap();
        assert_eq!(
            a.reports[0][0].squared_errors,
            a.reports[0][1].squared_errors
        );
        plan.folds = Some(vec![5, 2]);
        let b = run_study(&plan).unwrap();
        assert_eq!(
            a.reports[0][0].squared_errors[0],
            b.reports[0][0].squared_errors[1]
        );
        assert_eq!(a.reports[0][0].mspe, b.reports[0][0].mspe);
    }

    #[test]
    fn one_replicate_one_model_scoreboard() {
        let mut plan = quick(study1_plan(1));
        plan.roster.truncate(1);
        plan.folds = Some(vec![1]);
        let board = run_study(&plan).unwrap();
        assert_eq!(board.per_model.len(), 1);
        assert!(board.reductions.is_empty());
        let name = &plan.roster[0].name;
        assert_eq!(board.mean_mspe(name), board.reports[0][0].mspe);
    }

    #[test]
    fn saturated_noise_free_comparator_has_zero_mspe() {
        use crate::data::SpatialRef;
        use crate::el::EquationFamily;
        use crate::models::{BetaPrior, DataModel, ProcessPrior};
        use nalgebra::DMatrix;
        let n = 6;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let data = ObservedDataset {
            ids: (0..n).map(|i| i.to_string()).collect(),
            z: (0..n).map(|i| 1.0 + 0.5 * i as f64).collect(),
            x,
            covariate_names: vec!["intercept".into(), "x1".into()],
            sigma2: Some(vec![1e-12; n]),
            offset: None,
            spatial: SpatialRef::None,
        };
        let spec = ModelSpec {
            name: "exact".into(),
            family: EquationFamily::GaussianFh,
            data_model: DataModel::Parametric,
            process: ProcessPrior::None,
            beta_prior: BetaPrior::Gaussian {
                sd: 100.0,
                mean: None,
            },
            basis: Default::default(),
            variance_equation: true,
        };
        let opts = LooOptions {
            sampler: SamplerConfig {
                n_iter: 400,
                n_burn: 200,
                ..SamplerConfig::default()
            },
            el: ElConfig::default(),
            master_seed: 1,
            prediction: Prediction::PosteriorMean,
            folds: None,
        };
        let r = loo_mspe(&[spec], &data, &opts, 0).unwrap();
        assert!(r[0].mspe.unwrap() < 1e-9, "{:?}", r[0].mspe);
    }

    #[test]
    fn empty_roster_and_short_data_are_rejected() {
        let plan = study1_plan(1);
        let skel = build_skeleton(&plan.template).unwrap();
        assert!(matches!(
            loo_mspe(&[], &skel.data, &plan.loo_options(), 0),
            Err(HarnessError::InvalidPlan(_))
        ));
    }
}
