//! Desk-scale study designs.

use super::generate::{
    DatasetTemplate, GeneratorConfig, GeneratorKind, Layout, Outlier, ReferenceSource, TruthProcess,
};
use super::loo::Prediction;
use super::ExperimentPlan;
use crate::el::{ElConfig, EquationFamily};
use crate::mcmc::{PilotConfig, SamplerConfig};
use crate::models::{BetaPrior, DataModel, HyperPrior, ModelSpec, ProcessPrior};
use crate::spatial::QPolicy;

fn desk_sampler() -> SamplerConfig {
    SamplerConfig {
        n_iter: 2500,
        n_burn: 500,
        block_size: 15,
        pilot: PilotConfig {
            enabled: true,
            iters: 1000,
            inflation: None,
        },
        seed: 0,
        plain_random_walk: false,
        audit_feasibility: false,
        initial_step: 0.1,
    }
}

fn model(
    name: &str,
    family: EquationFamily,
    data_model: DataModel,
    process: ProcessPrior,
    beta_prior: BetaPrior,
) -> ModelSpec {
    ModelSpec {
        name: name.into(),
        family,
        data_model,
        process,
        beta_prior,
        basis: QPolicy::AllPositive,
        variance_equation: true,
    }
}

/// Area-level Gaussian data on a 5×6 lattice: SHEL with the Moran-ICAR
/// process against an EL model with independent area effects.
pub fn study1_plan(n_replicates: usize) -> ExperimentPlan {
    let fh = EquationFamily::GaussianFh;
    let el = DataModel::EmpiricalLikelihood;
    ExperimentPlan {
        name: "study1_fh_lattice".into(),
        template: DatasetTemplate {
            layout: Layout::Lattice { rows: 5, cols: 6 },
            family: fh,
            beta: vec![2.164, -0.042],
            covariate_range: [0.0, 10.0],
            sigma2_range: Some([0.01, 0.05]),
            expected_range: None,
            truth: TruthProcess::MoranIcar { tau: 3.48 },
            design_seed: 11,
        },
        generator: GeneratorConfig {
            kind: GeneratorKind::ElBootstrap,
            reference: ReferenceSource::Truth,
            skew_shape: 2.0,
            outlier: None,
        },
        n_replicates,
        roster: vec![
            model(
                "shel",
                fh,
                el,
                ProcessPrior::MoranIcar {
                    tau: HyperPrior::Gamma {
                        shape: 1.0,
                        rate: 1.0,
                    },
                },
                BetaPrior::Zellner { g: 10.0 },
            ),
            model(
                "independence",
                fh,
                el,
                ProcessPrior::Independence {
                    variance: HyperPrior::InverseGamma {
                        shape: 1.0,
                        scale: 1.0,
                    },
                },
                BetaPrior::Zellner { g: 10.0 },
            ),
        ],
        sampler: desk_sampler(),
        el: ElConfig::default(),
        master_seed: 2024,
        prediction: Prediction::PosteriorMean,
        folds: None,
    }
}

/// Point-referenced counts at 20 locations: SHEL with a GP process against
/// the parametric Poisson-GP model.
pub fn study2_plan(n_replicates: usize) -> ExperimentPlan {
    let pois = EquationFamily::PoissonLink;
    let gp = ProcessPrior::ExpGp {
        sigma2: HyperPrior::Uniform {
            lower: 0.01,
            upper: 100.0,
        },
        phi: HyperPrior::Uniform {
            lower: 0.0,
            upper: 4.0,
        },
    };
    let beta = BetaPrior::Gaussian {
        sd: 100.0,
        mean: None,
    };
    ExperimentPlan {
        name: "study2_poisson_points".into(),
        template: DatasetTemplate {
            layout: Layout::Points { n: 20, side: 4.0 },
            family: pois,
            beta: vec![3.3],
            covariate_range: [0.0, 1.0],
            sigma2_range: None,
            expected_range: None,
            truth: TruthProcess::ExpGp {
                sigma2: 0.5,
                phi: 1.0,
            },
            design_seed: 22,
        },
        generator: GeneratorConfig {
            kind: GeneratorKind::ElBootstrap,
            reference: ReferenceSource::Truth,
            skew_shape: 2.0,
            outlier: None,
        },
        n_replicates,
        roster: vec![
            model(
                "shel",
                pois,
                DataModel::EmpiricalLikelihood,
                gp,
                beta.clone(),
            ),
            model("poisson_gp", pois, DataModel::Parametric, gp, beta),
        ],
        sampler: desk_sampler(),
        el: ElConfig::default(),
        master_seed: 4242,
        prediction: Prediction::PosteriorMean,
        folds: None,
    }
}

/// Lattice counts with expected-count offsets and one injected outlier:
/// SHEL against the parametric Poisson model with the same process prior.
pub fn outlier_plan(n_replicates: usize) -> ExperimentPlan {
    let pois = EquationFamily::PoissonLink;
    let icar = ProcessPrior::MoranIcar {
        tau: HyperPrior::Uniform {
            lower: 0.01,
            upper: 100.0,
        },
    };
    ExperimentPlan {
        name: "outlier_poisson_lattice".into(),
        template: DatasetTemplate {
            layout: Layout::Lattice { rows: 5, cols: 6 },
            family: pois,
            beta: vec![0.0, 0.5],
            covariate_range: [0.0, 1.0],
            sigma2_range: None,
            expected_range: Some([5.0, 20.0]),
            truth: TruthProcess::MoranIcar { tau: 5.0 },
            design_seed: 33,
        },
        generator: GeneratorConfig {
            kind: GeneratorKind::Parametric,
            reference: ReferenceSource::Truth,
            skew_shape: 4.0,
            outlier: Some(Outlier {
                location: 14,
                size: 10.0,
            }),
        },
        n_replicates,
        roster: vec![
            model(
                "shel",
                pois,
                DataModel::EmpiricalLikelihood,
                icar,
                BetaPrior::Zellner { g: 10.0 },
            ),
            model(
                "poisson_icar",
                pois,
                DataModel::Parametric,
                icar,
                BetaPrior::Zellner { g: 10.0 },
            ),
        ],
        sampler: desk_sampler(),
        el: ElConfig::default(),
        master_seed: 7,
        prediction: Prediction::PosteriorMean,
        folds: None,
    }
}
