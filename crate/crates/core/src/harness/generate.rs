use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{derive_seed, HarnessError};
use crate::data::{ObservedDataset, SpatialRef};
use crate::el::{solve_lambda, ElConfig, EquationFamily, EstimatingEquations, Link};
use crate::mcmc::{run_chain, SamplerConfig};
use crate::models::{DataModel, ModelContext, ModelSpec};
use crate::spatial::{
    exp_covariance, moran_basis, LatticeGraph, PointField, QPolicy, SpatialBasis,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    /// Rook-adjacency grid.
    Lattice { rows: usize, cols: usize },
    /// Uniform locations on `[0, side]²`.
    Points { n: usize, side: f64 },
}

/// Latent process used to generate data, at fixed hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthProcess {
    MoranIcar { tau: f64 },
    ExpGp { sigma2: f64, phi: f64 },
    Independence { variance: f64 },
    None,
}

fn default_covariate_range() -> [f64; 2] {
    [0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetTemplate {
    pub layout: Layout,
    pub family: EquationFamily,
    /// Intercept first; each further entry pairs with a covariate drawn
    /// uniformly on `covariate_range`.
    pub beta: Vec<f64>,
    #[serde(default = "default_covariate_range")]
    pub covariate_range: [f64; 2],
    /// Sampling variances drawn uniformly on this range (Gaussian family).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_range: Option<[f64; 2]>,
    /// Expected counts `Eᵢ` drawn uniformly on this range; offset `log Eᵢ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_range: Option<[f64; 2]>,
    pub truth: TruthProcess,
    #[serde(default)]
    pub design_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Weighted residual bootstrap around a regenerated latent process.
    ElBootstrap,
    /// Exact Gaussian or Poisson draws.
    Parametric,
}

/// Where the reference `θ` for the bootstrap weights comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    /// The generating `θ` of the reference draw.
    #[default]
    Truth,
    /// Posterior mean of `θ` from the first EL model in the roster.
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outlier {
    pub location: usize,
    /// Shift in standard deviations `√Vᵢ`.
    pub size: f64,
}

fn default_skew_shape() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    #[serde(default)]
    pub reference: ReferenceSource,
    /// Gamma shape of the reference noise; smaller is more skewed.
    #[serde(default = "default_skew_shape")]
    pub skew_shape: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier: Option<Outlier>,
}

/// Fixed design of a study, with the machinery to draw the latent process.
#[derive(Debug, Clone)]
pub struct Skeleton {
    /// `z` is all zeros.
    pub data: ObservedDataset<f64>,
    pub beta: DVector<f64>,
    pub truth: TruthProcess,
    basis: Option<SpatialBasis<f64>>,
    gp_factor: Option<DMatrix<f64>>,
}

impl Skeleton {
    pub fn link(&self) -> Link {
        match self.data_family() {
            EquationFamily::GaussianFh => Link::Identity,
            EquationFamily::PoissonLink => Link::Log,
        }
    }

    fn data_family(&self) -> EquationFamily {
        if self.data.sigma2.is_some() {
            EquationFamily::GaussianFh
        } else {
            EquationFamily::PoissonLink
        }
    }

    /// A latent process draw on the location scale (`My*` on a lattice).
    pub fn draw_process<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.data.n();
        match self.truth {
            TruthProcess::MoranIcar { tau } => {
                let b = self.basis.as_ref().expect("built with the skeleton");
                let xi = normals(b.q(), rng);
                let l = b.reduced_chol.l();
                let ystar = l
                    .transpose()
                    .solve_upper_triangular(&xi)
                    .expect("Cholesky factor is nonsingular")
                    / tau.sqrt();
                &b.moran * ystar
            }
            TruthProcess::ExpGp { .. } => {
                self.gp_factor.as_ref().expect("built with the skeleton") * normals(n, rng)
            }
            TruthProcess::Independence { variance } => normals(n, rng) * variance.sqrt(),
            TruthProcess::None => DVector::zeros(n),
        }
    }

    pub fn theta(&self, y: &DVector<f64>) -> Vec<f64> {
        let eta = &self.data.x * &self.beta + y;
        let link = self.link();
        (0..self.data.n())
            .map(|i| {
                let off = self.data.offset.as_ref().map_or(0.0, |o| o[i]);
                link.apply(eta[i] + off).unwrap_or(f64::MAX)
            })
            .collect()
    }

    /// `σᵢ²` for the Gaussian family, `θᵢ` for counts.
    pub fn variance(&self, theta: &[f64]) -> Vec<f64> {
        match &self.data.sigma2 {
            Some(s) => s.clone(),
            None => theta.to_vec(),
        }
    }
}

fn normals<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn uniform<R: Rng>(range: [f64; 2], rng: &mut R) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

pub fn build_skeleton(t: &DatasetTemplate) -> Result<Skeleton, HarnessError> {
    let invalid = |m: &str| HarnessError::InvalidPlan(m.into());
    if t.beta.is_empty() {
        return Err(invalid("template needs at least an intercept"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(t.design_seed);
    let (n, spatial) = match t.layout {
        Layout::Lattice { rows, cols } => (
            rows * cols,
            SpatialRef::Lattice(LatticeGraph::grid(rows, cols)),
        ),
        Layout::Points { n, side } => {
            let coords: Vec<[f64; 2]> = (0..n)
                .map(|_| [side * rng.random::<f64>(), side * rng.random::<f64>()])
                .collect();
            (n, SpatialRef::Points(coords))
        }
    };
    if n < 3 {
        return Err(invalid("template needs at least 3 locations"));
    }
    let m = t.beta.len();
    let mut x = DMatrix::from_element(n, m, 1.0);
    for i in 0..n {
        for k in 1..m {
            x[(i, k)] = uniform(t.covariate_range, &mut rng);
        }
    }
    let sigma2 = match (t.family, t.sigma2_range) {
        (EquationFamily::GaussianFh, Some(r)) if r[0] > 0.0 && r[1] >= r[0] => {
            Some((0..n).map(|_| uniform(r, &mut rng)).collect::<Vec<f64>>())
        }
        (EquationFamily::GaussianFh, _) => {
            return Err(invalid("Gaussian template needs a positive sigma2_range"))
        }
        (EquationFamily::PoissonLink, _) => None,
    };
    let offset = match t.expected_range {
        Some(r) if r[0] > 0.0 && r[1] >= r[0] => {
            Some((0..n).map(|_| uniform(r, &mut rng).ln()).collect())
        }
        Some(_) => return Err(invalid("expected_range must be positive")),
        None => None,
    };
    let mut covariate_names = vec!["intercept".to_string()];
    covariate_names.extend((1..m).map(|k| format!("x{k}")));
    let data = ObservedDataset {
        ids: (0..n).map(|i| format!("loc{i}")).collect(),
        z: vec![0.0; n],
        x,
        covariate_names,
        sigma2,
        offset,
        spatial,
    };

    let (basis, gp_factor) = match (t.truth, &data.spatial) {
        (TruthProcess::MoranIcar { tau }, SpatialRef::Lattice(g)) if tau > 0.0 => {
            (Some(moran_basis(g, &data.x, QPolicy::AllPositive)?), None)
        }
        (TruthProcess::ExpGp { sigma2, phi }, SpatialRef::Points(c)) => {
            let cov = exp_covariance(&PointField {
                coords: c.clone(),
                sigma2_y: sigma2,
                phi,
            })?;
            let l = nalgebra::Cholesky::new(cov)
                .ok_or_else(|| invalid("truth covariance is not positive definite"))?
                .l();
            (None, Some(l))
        }
        (TruthProcess::Independence { variance }, _) if variance > 0.0 => (None, None),
        (TruthProcess::None, _) => (None, None),
        _ => return Err(invalid("truth process does not match the layout")),
    };
    Ok(Skeleton {
        data,
        beta: DVector::from_vec(t.beta.clone()),
        truth: t.truth,
        basis,
        gp_factor,
    })
}

/// Observations, mean and EL weights defining the bootstrap residual law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
    pub weights: Vec<f64>,
}

fn skewed_draw<R: Rng>(skel: &Skeleton, theta: &[f64], shape: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(shape, 1.0).expect("positive shape");
    match &skel.data.sigma2 {
        Some(s2) => theta
            .iter()
            .zip(s2)
            .map(|(t, s)| t + s.sqrt() * (gamma.sample(rng) - shape) / shape.sqrt())
            .collect(),
        None => theta
            .iter()
            .map(|t| poisson(t * gamma.sample(rng) / shape, rng))
            .collect(),
    }
}

fn poisson<R: Rng>(rate: f64, rng: &mut R) -> f64 {
    if rate > 0.0 && rate.is_finite() {
        Poisson::new(rate)
            .map(|p| p.sample(rng))
            .unwrap_or(rate.round())
    } else {
        0.0
    }
}

fn el_weights(skel: &Skeleton, z: &[f64], theta: &[f64], el: &ElConfig) -> Option<Vec<f64>> {
    let eqs = match &skel.data.sigma2 {
        Some(s) => EstimatingEquations::gaussian_fh(s),
        None => EstimatingEquations::poisson_link(),
    };
    let state = solve_lambda(z, theta, &eqs, el).ok()?;
    state
        .feasible
        .then(|| state.weights.iter().copied().collect())
}

/// Draws a skewed reference dataset and its EL weights, retrying until the
/// weights are feasible.
pub fn build_reference(
    skel: &Skeleton,
    gen: &GeneratorConfig,
    roster: &[ModelSpec],
    sampler: &SamplerConfig,
    el: &ElConfig,
    seed: u64,
) -> Result<Reference, HarnessError> {
    const ATTEMPTS: usize = 100;
    if !(gen.skew_shape > 0.0 && gen.skew_shape.is_finite()) {
        return Err(HarnessError::InvalidPlan(
            "skew_shape must be positive".into(),
        ));
    }
    let fit_spec = match gen.reference {
        ReferenceSource::Truth => None,
        ReferenceSource::Fitted => Some(
            roster
                .iter()
                .find(|s| s.data_model == DataModel::EmpiricalLikelihood)
                .ok_or_else(|| {
                    HarnessError::InvalidPlan("fitted reference needs an EL model".into())
                })?,
        ),
    };
    for attempt in 0..ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[attempt as u64]));
        let theta_true = skel.theta(&skel.draw_process(&mut rng));
        let z = skewed_draw(skel, &theta_true, gen.skew_shape, &mut rng);
        let theta = match fit_spec {
            None => theta_true,
            Some(spec) => {
                let data = skel.data.with_z(z.clone());
                let Ok(ctx) = ModelContext::full(spec, &data, *el) else {
                    continue;
                };
                let cfg = SamplerConfig {
                    seed: derive_seed(seed, &[attempt as u64, 1]),
                    ..sampler.clone()
                };
                let Ok(chain) = run_chain(&ctx, &cfg) else {
                    continue;
                };
                chain.theta_mean().iter().copied().collect()
            }
        };
        if let Some(weights) = el_weights(skel, &z, &theta, el) {
            return Ok(Reference { z, theta, weights });
        }
    }
    Err(HarnessError::InfeasibleReference { attempts: ATTEMPTS })
}

/// Resamples reference residuals with probabilities `w` around a new mean.
///
/// Identity link: `zᵢ = θᵢ + (z_k − θ_k)`. Log link: the rate `θᵢ·z_k/θ_k`
/// feeds a Poisson draw.
pub fn generate_from_el<R: Rng>(
    reference: &Reference,
    theta_new: &[f64],
    link: Link,
    rng: &mut R,
) -> Result<Vec<f64>, HarnessError> {
    let bad = HarnessError::InfeasibleReference { attempts: 0 };
    let sum: f64 = reference.weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || reference.weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(bad);
    }
    let pick = WeightedIndex::new(&reference.weights).map_err(|_| bad)?;
    Ok(theta_new
        .iter()
        .map(|t| {
            let k = pick.sample(rng);
            match link {
                Link::Identity => t + reference.z[k] - reference.theta[k],
                Link::Log => poisson(t * reference.z[k] / reference.theta[k], rng),
            }
        })
        .collect())
}

/// One synthetic dataset for replicate seed `seed`.
pub fn generate_replicate(
    skel: &Skeleton,
    gen: &GeneratorConfig,
    reference: Option<&Reference>,
    seed: u64,
) -> Result<ObservedDataset<f64>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = skel.theta(&skel.draw_process(&mut rng));
    let var = skel.variance(&theta);
    let mut z = match (gen.kind, reference) {
        (GeneratorKind::ElBootstrap, Some(r)) => {
            generate_from_el(r, &theta, skel.link(), &mut rng)?
        }
        (GeneratorKind::ElBootstrap, None) => {
            return Err(HarnessError::InvalidPlan(
                "EL generator needs a reference".into(),
            ))
        }
        (GeneratorKind::Parametric, _) => match skel.link() {
            Link::Identity => theta
                .iter()
                .zip(&var)
                .map(|(t, v)| t + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Link::Log => theta.iter().map(|t| poisson(*t, &mut rng)).collect(),
        },
    };
    if let Some(o) = gen.outlier {
        if o.location >= z.len() {
            return Err(HarnessError::InvalidPlan(format!(
                "outlier location {} out of range",
                o.location
            )));
        }
        let shift = o.size * var[o.location].sqrt();
        z[o.location] += match skel.link() {
            Link::Identity => shift,
            Link::Log => shift.round(),
        };
    }
    Ok(skel.data.with_z(z))
}
