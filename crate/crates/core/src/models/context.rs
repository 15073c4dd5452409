use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::function::gamma::ln_gamma;

use super::{BetaPrior, DataModel, LatentState, ModelError, ModelSpec, ProcessPrior};
use crate::data::{ObservedDataset, SpatialRef};
use crate::el::{
    solve_lambda, wls_start, ElConfig, ElError, ElState, EquationFamily, EstimatingEquations, Link,
    MeleProblem,
};
use crate::linalg::{chol_logdet, chol_quad_inv, WlsFit};
use crate::spatial::{
    check_distinct, distance_matrix, exp_covariance_from_distances, moran_basis, SpatialBasis,
};
use crate::Real;

/// Precomputed spatial structure, shared across folds of the same dataset.
#[derive(Debug, Clone)]
pub enum Structure<S: Real> {
    Lattice(SpatialBasis<S>),
    Points { dist: DMatrix<S> },
    Unstructured,
}

impl<S: Real> Structure<S> {
    pub fn build(spec: &ModelSpec, data: &ObservedDataset<S>) -> Result<Self, ModelError> {
        match (&spec.process, &data.spatial) {
            (ProcessPrior::MoranIcar { .. }, SpatialRef::Lattice(g)) => {
                Ok(Structure::Lattice(moran_basis(g, &data.x, spec.basis)?))
            }
            (ProcessPrior::MoranIcar { .. }, _) => {
                Err(ModelError::MissingSpatialStructure("lattice"))
            }
            (ProcessPrior::ExpGp { .. }, SpatialRef::Points(coords)) => {
                if coords.len() != data.n() {
                    return Err(ModelError::StateDimension {
                        block: "coordinates",
                        expected: data.n(),
                        found: coords.len(),
                    });
                }
                check_distinct(coords)?;
                Ok(Structure::Points {
                    dist: distance_matrix(coords),
                })
            }
            (ProcessPrior::ExpGp { .. }, _) => {
                Err(ModelError::MissingSpatialStructure("point coordinate"))
            }
            _ => Ok(Structure::Unstructured),
        }
    }
}

/// Cholesky factor of a GP covariance at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GpFactor<S: Real> {
    pub chol: Cholesky<S, Dyn>,
    pub logdet: S,
}

#[derive(Debug, Clone)]
pub struct LikEval<S: Real> {
    /// `−∞` for an infeasible EL state.
    pub value: S,
    pub el: Option<ElState<S>>,
}

/// Log posterior kernel split into its parts.
#[derive(Debug, Clone)]
pub struct Kernel<S: Real> {
    pub theta: DVector<S>,
    pub log_lik: S,
    pub log_prior: S,
    pub el: Option<ElState<S>>,
}

impl<S: Real> Kernel<S> {
    pub fn total(&self) -> S {
        self.log_lik + self.log_prior
    }
}

/// A model bound to a dataset, with some locations optionally held out of the
/// likelihood. Held-out locations keep their covariates and spatial position.
#[derive(Debug, Clone)]
pub struct ModelContext<S: Real> {
    pub spec: ModelSpec,
    structure: Arc<Structure<S>>,
    x: DMatrix<S>,
    offset: Option<Vec<S>>,
    observed: Vec<usize>,
    z_obs: Vec<S>,
    x_obs: DMatrix<S>,
    offset_obs: Option<Vec<S>>,
    sigma2_obs: Option<Vec<S>>,
    wls: WlsFit<S>,
    beta_mean: DVector<S>,
    poisson_const: S,
    el_cfg: ElConfig,
}

impl<S: Real> ModelContext<S> {
    pub fn new(
        spec: &ModelSpec,
        data: &ObservedDataset<S>,
        structure: Arc<Structure<S>>,
        held_out: &[usize],
        el_cfg: ElConfig,
    ) -> Result<Self, ModelError> {
        spec.validate()?;
        let n = data.n();
        if data.x.nrows() != n {
            return Err(ModelError::StateDimension {
                block: "design rows",
                expected: n,
                found: data.x.nrows(),
            });
        }
        for &i in held_out {
            if i >= n {
                return Err(ModelError::HeldOutOutOfRange { index: i, n });
            }
        }
        match (&spec.process, structure.as_ref()) {
            (ProcessPrior::MoranIcar { .. }, Structure::Lattice(b)) if b.n() == n => {}
            (ProcessPrior::MoranIcar { .. }, _) => {
                return Err(ModelError::MissingSpatialStructure("lattice"))
            }
            (ProcessPrior::ExpGp { .. }, Structure::Points { dist }) if dist.nrows() == n => {}
            (ProcessPrior::ExpGp { .. }, _) => {
                return Err(ModelError::MissingSpatialStructure("point coordinate"))
            }
            _ => {}
        }
        let needs_sigma2 = spec.family == EquationFamily::GaussianFh
            && (spec.data_model == DataModel::Parametric || spec.variance_equation);
        if needs_sigma2 && data.sigma2.is_none() {
            return Err(ModelError::MissingSamplingVariances);
        }
        if let Some(s) = &data.sigma2 {
            if let Some(i) = s.iter().position(|v| !(*v > S::zero())) {
                return Err(ElError::NonPositiveVariance { index: i }.into());
            }
        }
        if spec.family == EquationFamily::PoissonLink {
            if let Some(i) = data.z.iter().position(|v| *v < S::zero()) {
                return Err(ModelError::NegativeCount(i));
            }
        }

        let observed: Vec<usize> = (0..n).filter(|i| !held_out.contains(i)).collect();
        let pick = |v: &[S]| observed.iter().map(|&i| v[i]).collect::<Vec<S>>();
        let z_obs = pick(&data.z);
        let x_obs = data.x.select_rows(observed.iter());
        let offset_obs = data.offset.as_deref().map(pick);
        let sigma2_obs = data.sigma2.as_deref().map(pick);

        let eqs = equations(spec, sigma2_obs.as_deref());
        if spec.data_model == DataModel::EmpiricalLikelihood && z_obs.len() <= eqs.count() {
            return Err(ElError::TooFewObservations {
                n: z_obs.len(),
                equations: eqs.count(),
                needed: eqs.count() + 1,
            }
            .into());
        }
        let wls = wls_start(&MeleProblem {
            z: &z_obs,
            x: &x_obs,
            offset: offset_obs.as_deref(),
            link: spec.link(),
            eqs,
        })?;

        let m = data.m();
        let beta_mean = match &spec.beta_prior {
            BetaPrior::Zellner { .. } => wls.beta.clone(),
            BetaPrior::Gaussian { mean: None, .. } => DVector::zeros(m),
            BetaPrior::Gaussian { mean: Some(v), .. } => {
                if v.len() != m {
                    return Err(ModelError::StateDimension {
                        block: "beta prior mean",
                        expected: m,
                        found: v.len(),
                    });
                }
                DVector::from_iterator(m, v.iter().map(|&b| S::lit(b)))
            }
        };
        let poisson_const = S::lit(
            z_obs
                .iter()
                .map(|z| ln_gamma(z.as_f64() + 1.0))
                .sum::<f64>(),
        );

        Ok(Self {
            spec: spec.clone(),
            structure,
            x: data.x.clone(),
            offset: data.offset.clone(),
            observed,
            z_obs,
            x_obs,
            offset_obs,
            sigma2_obs,
            wls,
            beta_mean,
            poisson_const,
            el_cfg,
        })
    }

    /// Builds the structure and binds the full dataset.
    pub fn full(
        spec: &ModelSpec,
        data: &ObservedDataset<S>,
        el_cfg: ElConfig,
    ) -> Result<Self, ModelError> {
        let structure = Arc::new(Structure::build(spec, data)?);
        Self::new(spec, data, structure, &[], el_cfg)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    pub fn link(&self) -> Link {
        self.spec.link()
    }

    pub fn structure(&self) -> &Structure<S> {
        &self.structure
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn z_observed(&self) -> &[S] {
        &self.z_obs
    }

    pub fn el_config(&self) -> &ElConfig {
        &self.el_cfg
    }

    /// WLS fit on the observed rows with no latent effects.
    pub fn wls(&self) -> &WlsFit<S> {
        &self.wls
    }

    /// Zellner centre (or Gaussian prior mean).
    pub fn beta_center(&self) -> &DVector<S> {
        &self.beta_mean
    }

    pub fn process_dim(&self) -> usize {
        match (&self.spec.process, self.structure.as_ref()) {
            (ProcessPrior::MoranIcar { .. }, Structure::Lattice(b)) => b.q(),
            (ProcessPrior::None, _) => 0,
            _ => self.n(),
        }
    }

    /// Intercept column when the latent process has one coordinate per
    /// location, so that `β₀` and the process level trade off exactly.
    pub fn level_column(&self) -> Option<usize> {
        match self.spec.process {
            ProcessPrior::ExpGp { .. } | ProcessPrior::Independence { .. } => {}
            _ => return None,
        }
        self.x
            .column_iter()
            .position(|c| c.iter().all(|v| (*v - S::one()).abs() <= S::lit(1e-12)))
    }

    pub fn hyper_dim(&self) -> usize {
        self.spec.process.hyper_names().len()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.m()).map(|k| format!("beta{k}")).collect();
        let prefix = match self.spec.process {
            ProcessPrior::MoranIcar { .. } => "ystar",
            _ => "y",
        };
        names.extend((0..self.process_dim()).map(|k| format!("{prefix}{k}")));
        names.extend(
            self.spec
                .process
                .hyper_names()
                .into_iter()
                .map(String::from),
        );
        names
    }

    pub fn equations(&self) -> EstimatingEquations<'_, S> {
        equations(&self.spec, self.sigma2_obs.as_deref())
    }

    /// The fixed-effects-only problem on the observed rows.
    pub fn mele_problem(&self) -> MeleProblem<'_, S> {
        MeleProblem {
            z: &self.z_obs,
            x: &self.x_obs,
            offset: self.offset_obs.as_deref(),
            link: self.link(),
            eqs: self.equations(),
        }
    }

    fn check_state(&self, state: &LatentState<S>) -> Result<(), ModelError> {
        let dims = [
            ("beta", self.m(), state.beta.len()),
            ("process", self.process_dim(), state.process.len()),
            ("hyper", self.hyper_dim(), state.hyper.len()),
        ];
        for (block, expected, found) in dims {
            if expected != found {
                return Err(ModelError::StateDimension {
                    block,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }

    /// Linear predictor `Xβ + offset + (My* or y)` at every location.
    pub fn linear_predictor(&self, state: &LatentState<S>) -> Result<DVector<S>, ModelError> {
        self.check_state(state)?;
        let mut eta = &self.x * &state.beta;
        if let Some(off) = &self.offset {
            for (e, o) in eta.iter_mut().zip(off) {
                *e += *o;
            }
        }
        match (&self.spec.process, self.structure.as_ref()) {
            (ProcessPrior::None, _) => {}
            (ProcessPrior::MoranIcar { .. }, Structure::Lattice(b)) => {
                eta += &b.moran * &state.process
            }
            _ => eta += &state.process,
        }
        Ok(eta)
    }

    /// `θ = g(η)` at every location, held-out ones included.
    pub fn build_theta(&self, state: &LatentState<S>) -> Result<DVector<S>, ModelError> {
        let link = self.link();
        let eta = self.linear_predictor(state)?;
        let mut theta = eta;
        for t in theta.iter_mut() {
            *t = link.apply(*t).ok_or(ModelError::Overflow)?;
        }
        Ok(theta)
    }

    /// Data-stage log likelihood at the observed locations.
    pub fn log_likelihood(&self, theta: &DVector<S>) -> LikEval<S> {
        let th: Vec<S> = self.observed.iter().map(|&i| theta[i]).collect();
        match self.spec.data_model {
            DataModel::EmpiricalLikelihood => {
                match solve_lambda(&self.z_obs, &th, &self.equations(), &self.el_cfg) {
                    Ok(state) => LikEval {
                        value: state.log_el,
                        el: Some(state),
                    },
                    Err(_) => LikEval {
                        value: S::neg_infinity(),
                        el: None,
                    },
                }
            }
            DataModel::Parametric => LikEval {
                value: self.parametric_loglik(&th),
                el: None,
            },
        }
    }

    fn parametric_loglik(&self, theta: &[S]) -> S {
        let two_pi = S::two_pi();
        match self.spec.family {
            EquationFamily::GaussianFh => {
                let s2 = self
                    .sigma2_obs
                    .as_deref()
                    .expect("validated at construction");
                let half = S::lit(0.5);
                (0..theta.len()).fold(S::zero(), |acc, i| {
                    let r = self.z_obs[i] - theta[i];
                    acc - half * (two_pi * s2[i]).ln() - half * r * r / s2[i]
                })
            }
            EquationFamily::PoissonLink => {
                let mut acc = -self.poisson_const;
                for i in 0..theta.len() {
                    let t = theta[i];
                    if !(t > S::zero()) {
                        return S::neg_infinity();
                    }
                    acc += self.z_obs[i] * t.ln() - t;
                }
                acc
            }
        }
    }

    /// Precision multiplier tying the Zellner prior to the process scale.
    pub fn process_scale(&self, hyper: &[S]) -> S {
        match self.spec.process {
            ProcessPrior::MoranIcar { .. } => hyper[0],
            ProcessPrior::ExpGp { .. } | ProcessPrior::Independence { .. } => S::one() / hyper[0],
            ProcessPrior::None => S::one(),
        }
    }

    pub fn gp_factor(&self, hyper: &[S]) -> Option<GpFactor<S>> {
        let Structure::Points { dist } = self.structure.as_ref() else {
            return None;
        };
        let cov = exp_covariance_from_distances(dist, hyper[0], hyper[1]).ok()?;
        let chol = Cholesky::new(cov)?;
        let logdet = chol_logdet(&chol);
        Some(GpFactor { chol, logdet })
    }

    /// Log density of the latent process given the hyperparameters. A GP
    /// factor is computed on the fly when none is supplied.
    pub fn log_process_prior(&self, state: &LatentState<S>, gp: Option<&GpFactor<S>>) -> S {
        let half = S::lit(0.5);
        let ln_2pi = S::two_pi().ln();
        let h = &state.hyper;
        if h.iter().any(|v| !(*v > S::zero() && v.finite())) {
            return S::neg_infinity();
        }
        let y = &state.process;
        let k = S::from_usize_lossy(y.len());
        match (&self.spec.process, self.structure.as_ref()) {
            (ProcessPrior::MoranIcar { .. }, Structure::Lattice(b)) => {
                let tau = h[0];
                half * k * (tau.ln() - ln_2pi) + half * b.reduced_logdet
                    - half * tau * b.quad_form(y)
            }
            (ProcessPrior::ExpGp { .. }, _) => {
                let owned;
                let factor = match gp {
                    Some(f) => f,
                    None => match self.gp_factor(h) {
                        Some(f) => {
                            owned = f;
                            &owned
                        }
                        None => return S::neg_infinity(),
                    },
                };
                -half * (k * ln_2pi + factor.logdet + chol_quad_inv(&factor.chol, y))
            }
            (ProcessPrior::Independence { .. }, _) => {
                let a = h[0];
                -half * k * (ln_2pi + a.ln()) - half * y.norm_squared() / a
            }
            _ => S::zero(),
        }
    }

    pub fn log_beta_prior(&self, state: &LatentState<S>) -> S {
        let half = S::lit(0.5);
        let ln_2pi = S::two_pi().ln();
        let m = S::from_usize_lossy(self.m());
        let d2 = (&state.beta - &self.beta_mean).norm_squared();
        match self.spec.beta_prior {
            BetaPrior::Zellner { g } => {
                let prec = S::lit(g) * self.process_scale(&state.hyper);
                if !(prec > S::zero() && prec.finite()) {
                    return S::neg_infinity();
                }
                half * m * (prec.ln() - ln_2pi) - half * prec * d2
            }
            BetaPrior::Gaussian { sd, .. } => {
                let var = S::lit(sd * sd);
                -half * m * (ln_2pi + var.ln()) - half * d2 / var
            }
        }
    }

    pub fn log_hyper_prior(&self, hyper: &[S]) -> S {
        self.spec
            .process
            .hyper_priors()
            .iter()
            .zip(hyper)
            .fold(S::zero(), |acc, (p, v)| acc + S::lit(p.ln_pdf(v.as_f64())))
    }

    pub fn log_prior(&self, state: &LatentState<S>, gp: Option<&GpFactor<S>>) -> S {
        let hyper = self.log_hyper_prior(&state.hyper);
        if hyper == S::neg_infinity() {
            return hyper;
        }
        hyper + self.log_process_prior(state, gp) + self.log_beta_prior(state)
    }

    /// Likelihood plus prior. `Overflow` signals a proposal to auto-reject.
    pub fn kernel(
        &self,
        state: &LatentState<S>,
        gp: Option<&GpFactor<S>>,
    ) -> Result<Kernel<S>, ModelError> {
        let theta = self.build_theta(state)?;
        let lik = self.log_likelihood(&theta);
        Ok(Kernel {
            theta,
            log_lik: lik.value,
            log_prior: self.log_prior(state, gp),
            el: lik.el,
        })
    }

    pub fn log_posterior_kernel(&self, state: &LatentState<S>) -> S {
        self.kernel(state, None)
            .map(|k| k.total())
            .unwrap_or_else(|_| S::neg_infinity())
    }
}

fn equations<'a, S: Real>(spec: &ModelSpec, sigma2: Option<&'a [S]>) -> EstimatingEquations<'a, S> {
    EstimatingEquations {
        family: spec.family,
        variance_equation: spec.variance_equation,
        sigma2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::HyperPrior;
    use crate::spatial::{LatticeGraph, QPolicy};

    fn fh_data(n_rows: usize, n_cols: usize) -> ObservedDataset<f64> {
        let n = n_rows * n_cols;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i % 7) as f64 * 0.3 });
        let z: Vec<f64> = (0..n)
            .map(|i| 2.0 + 0.1 * ((i * 13 % 11) as f64 - 5.0))
            .collect();
        ObservedDataset {
            ids: (0..n).map(|i| i.to_string()).collect(),
            z,
            x,
            covariate_names: vec!["intercept".into(), "x1".into()],
            sigma2: Some(vec![0.05; n]),
            offset: None,
            spatial: SpatialRef::Lattice(LatticeGraph::grid(n_rows, n_cols)),
        }
    }

    fn spec(process: ProcessPrior, data_model: DataModel, family: EquationFamily) -> ModelSpec {
        ModelSpec {
            name: "t".into(),
            family,
            data_model,
            process,
            beta_prior: BetaPrior::Zellner { g: 10.0 },
            basis: QPolicy::AllPositive,
            variance_equation: true,
        }
    }

    fn icar() -> ProcessPrior {
        ProcessPrior::MoranIcar {
            tau: HyperPrior::Gamma {
                shape: 1.0,
                rate: 1.0,
            },
        }
    }

    #[test]
    fn identity_theta_from_zero_state_is_zero() {
        let data = fh_data(3, 4);
        let ctx = ModelContext::full(
            &spec(
                icar(),
                DataModel::EmpiricalLikelihood,
                EquationFamily::GaussianFh,
            ),
            &data,
            ElConfig::default(),
        )
        .unwrap();
        let state = LatentState {
            beta: DVector::zeros(2),
            process: DVector::zeros(ctx.process_dim()),
            hyper: vec![1.0],
        };
        assert!(ctx.build_theta(&state).unwrap().iter().all(|t| *t == 0.0));
    }

    #[test]
    fn fixed_effects_reproduce_reported_mean() {
        let n = 4;
        let data = ObservedDataset {
            ids: (0..n).map(|i| i.to_string()).collect(),
            z: vec![2.0, 2.1, 2.2, 2.0],
            x: DMatrix::from_row_slice(n, 2, &[1.0, 1.0, 1.0, 0.0, 1.0, 2.0, 1.0, 1.5]),
            covariate_names: vec!["intercept".into(), "x1".into()],
            sigma2: Some(vec![0.1; n]),
            offset: None,
            spatial: SpatialRef::None,
        };
        let mut s = spec(
            ProcessPrior::None,
            DataModel::Parametric,
            EquationFamily::GaussianFh,
        );
        s.beta_prior = BetaPrior::Gaussian {
            sd: 10.0,
            mean: None,
        };
        let ctx = ModelContext::full(&s, &data, ElConfig::default()).unwrap();
        let state = LatentState {
            beta: DVector::from_vec(vec![2.164, -0.042]),
            process: DVector::zeros(0),
            hyper: vec![],
        };
        let theta = ctx.build_theta(&state).unwrap();
        assert!((theta[0] - 2.122f64).abs() < 1e-12);
    }

    #[test]
    fn offset_only_rate_under_log_link() {
        let n = 5;
        let data = ObservedDataset {
            ids: (0..n).map(|i| i.to_string()).collect(),
            z: vec![1.0, 3.0, 2.0, 0.0, 4.0],
            x: DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 }),
            covariate_names: vec!["intercept".into(), "x1".into()],
            sigma2: None,
            offset: Some(vec![2f64.ln(); n]),
            spatial: SpatialRef::None,
        };
        let ctx = ModelContext::full(
            &spec(
                ProcessPrior::None,
                DataModel::EmpiricalLikelihood,
                EquationFamily::PoissonLink,
            ),
            &data,
            ElConfig::default(),
        )
        .unwrap();
        let state = LatentState {
            beta: DVector::zeros(2),
            process: DVector::zeros(0),
            hyper: vec![],
        };
        let theta = ctx.build_theta(&state).unwrap();
        assert!(theta.iter().all(|t| (t - 2.0).abs() < 1e-12));
        let huge = LatentState {
            beta: DVector::from_vec(vec![800.0, 0.0]),
            ..state
        };
        assert_eq!(ctx.build_theta(&huge).unwrap_err(), ModelError::Overflow);
        assert_eq!(ctx.log_posterior_kernel(&huge), f64::NEG_INFINITY);
    }

    #[test]
    fn lattice_process_term_at_zero_matches_hand_formula() {
        let data = fh_data(3, 4);
        let ctx = ModelContext::full(
            &spec(
                icar(),
                DataModel::EmpiricalLikelihood,
                EquationFamily::GaussianFh,
            ),
            &data,
            ElConfig::default(),
        )
        .unwrap();
        let Structure::Lattice(b) = ctx.structure() else {
            panic!()
        };
        let q = b.q() as f64;
        let state = LatentState {
            beta: ctx.beta_center().clone(),
            process: DVector::zeros(b.q()),
            hyper: vec![1.0],
        };
        let want = -0.5 * q * (2.0 * std::f64::consts::PI).ln() + 0.5 * b.reduced_logdet;
        assert!((ctx.log_process_prior(&state, None) - want).abs() < 1e-12);
    }

    #[test]
    fn uniform_phi_outside_support_gives_neg_infinity() {
        let coords: Vec<[f64; 2]> = (0..6)
            .map(|i| [i as f64 * 0.5, (i * i) as f64 * 0.1])
            .collect();
        let mut data = fh_data(2, 3);
        data.spatial = SpatialRef::Points(coords);
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
        let ctx = ModelContext::full(
            &spec(
                gp,
                DataModel::EmpiricalLikelihood,
                EquationFamily::GaussianFh,
            ),
            &data,
            ElConfig::default(),
        )
        .unwrap();
        let state = LatentState {
            beta: ctx.beta_center().clone(),
            process: DVector::zeros(6),
            hyper: vec![1.0, 5.0],
        };
        assert_eq!(ctx.log_prior(&state, None), f64::NEG_INFINITY);
        let ok = LatentState {
            hyper: vec![1.0, 2.0],
            ..state
        };
        assert!(ctx.log_prior(&ok, None).is_finite());
    }

    #[test]
    fn independence_prior_matches_closed_form() {
        let mut data = fh_data(2, 3);
        data.spatial = SpatialRef::None;
        let mut s = spec(
            ProcessPrior::Independence {
                variance: HyperPrior::InverseGamma {
                    shape: 1.0,
                    scale: 1.0,
                },
            },
            DataModel::EmpiricalLikelihood,
            EquationFamily::GaussianFh,
        );
        s.beta_prior = BetaPrior::Gaussian {
            sd: 100.0,
            mean: None,
        };
        let ctx = ModelContext::full(&s, &data, ElConfig::default()).unwrap();
        let state = LatentState {
            beta: DVector::from_vec(vec![1.0, -2.0]),
            process: DVector::zeros(6),
            hyper: vec![1.0],
        };
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let process = -3.0 * ln2pi;
        let ig = -1.0; // ln Γ(1) = 0, scale/A = 1
        let beta = -(ln2pi + 1e4f64.ln()) - 0.5 * 5.0 / 1e4;
        assert!((ctx.log_prior(&state, None) - (process + ig + beta)).abs() < 1e-10);
    }

    #[test]
    fn kernel_is_additive_and_infeasible_is_neg_infinity() {
        let data = fh_data(3, 4);
        let ctx = ModelContext::full(
            &spec(
                icar(),
                DataModel::EmpiricalLikelihood,
                EquationFamily::GaussianFh,
            ),
            &data,
            ElConfig::default(),
        )
        .unwrap();
        let fit = crate::el::mele_fit(&ctx.mele_problem(), ctx.el_config()).unwrap();
        let state = LatentState {
            beta: fit.beta.clone(),
            process: DVector::zeros(ctx.process_dim()),
            hyper: vec![2f64.ln()],
        };
        let k = ctx.kernel(&state, None).unwrap();
        assert!(k.total().is_finite());
        let parts = ctx.log_likelihood(&k.theta).value + ctx.log_prior(&state, None);
        assert_eq!(k.total(), parts);
        let far = LatentState {
            beta: DVector::from_vec(vec![100.0, 0.0]),
            ..state
        };
        assert_eq!(ctx.log_posterior_kernel(&far), f64::NEG_INFINITY);
    }

    #[test]
    fn gaussian_comparator_at_zero_residuals() {
        let mut data = fh_data(2, 3);
        data.spatial = SpatialRef::None;
        data.sigma2 = Some(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let ctx = ModelContext::full(
            &spec(
                ProcessPrior::None,
                DataModel::Parametric,
                EquationFamily::GaussianFh,
            ),
            &data,
            ElConfig::default(),
        )
        .unwrap();
        let theta = DVector::from_vec(data.z.clone());
        let want: f64 = data
            .sigma2
            .as_ref()
            .unwrap()
            .iter()
            .map(|s| -0.5 * (2.0 * std::f64::consts::PI * s).ln())
            .sum();
        assert!((ctx.log_likelihood(&theta).value - want).abs() < 1e-12);
    }

    #[test]
    fn held_out_location_leaves_the_likelihood() {
        let data = fh_data(3, 4);
        let s = spec(icar(), DataModel::Parametric, EquationFamily::GaussianFh);
        let structure = Arc::new(Structure::build(&s, &data).unwrap());
        let full =
            ModelContext::new(&s, &data, structure.clone(), &[], ElConfig::default()).unwrap();
        let loo = ModelContext::new(&s, &data, structure, &[5], ElConfig::default()).unwrap();
        assert_eq!(loo.observed().len(), 11);
        assert!(!loo.observed().contains(&5));
        let mut theta = DVector::from_vec(data.z.clone());
        let base = loo.log_likelihood(&theta).value;
        theta[5] += 10.0;
        assert_eq!(loo.log_likelihood(&theta).value, base);
        assert!(full.log_likelihood(&theta).value < base);
    }

    #[test]
    fn gaussian_family_without_variances_is_rejected() {
        let mut data = fh_data(2, 3);
        data.sigma2 = None;
        let err = ModelContext::full(
            &spec(
                icar(),
                DataModel::EmpiricalLikelihood,
                EquationFamily::GaussianFh,
            ),
            &data,
            ElConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, ModelError::MissingSamplingVariances);
    }

    #[test]
    fn moran_prior_needs_a_lattice() {
        let mut data = fh_data(2, 3);
        data.spatial = SpatialRef::None;
        let err = ModelContext::full(
            &spec(
                icar(),
                DataModel::EmpiricalLikelihood,
                EquationFamily::GaussianFh,
            ),
            &data,
            ElConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, ModelError::MissingSpatialStructure("lattice"));
    }
}
