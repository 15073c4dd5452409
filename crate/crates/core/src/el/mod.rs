//! Empirical likelihood under two-moment estimating equations.
//!
//! For conditional means `θᵢ` the residual functions are
//!
//! ```text
//! m₁ᵢ = zᵢ − θᵢ
//! m₂ᵢ = (zᵢ − θᵢ)² / V(θᵢ) − 1
//! ```
//!
//! with `V(θᵢ) = σᵢ²` (Fay-Herriot, known sampling variances) or `V(θᵢ) = θᵢ`
//! (Poisson link). The "−1" is carried per observation so both constraints have
//! the form `Σᵢ wᵢ mⱼᵢ = 0`. Given multipliers `λ` the weights are
//! `wᵢ = 1 / (n (1 + λ'mᵢ))`.

mod mele;
mod solver;

pub use mele::{mele_fit, wls_start, Link, MeleFit, MeleProblem};
pub use solver::{solve_lambda, solve_lambda_residuals, LambdaMethod, LambdaSolution};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

/// Feasibility threshold applied to `|Σwᵢ − 1|` and every `|Σwᵢmⱼᵢ|`.
pub const DEFAULT_EPS: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ElError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {needed} observations for {equations} equations, got {n}")]
    TooFewObservations {
        n: usize,
        equations: usize,
        needed: usize,
    },
    #[error("non-finite residual at observation {index}")]
    NonFiniteResidual { index: usize },
    #[error("non-positive variance function at observation {index}")]
    NonPositiveVariance { index: usize },
    #[error("Gaussian estimating equations require known sampling variances")]
    MissingSamplingVariances,
    #[error("weight denominator 1 + λ'm is not positive at observation {index}")]
    NonPositiveDenominator { index: usize },
    #[error("design matrix is rank deficient")]
    RankDeficientDesign,
    #[error("no feasible starting point found near the WLS estimate {fallback:?}")]
    NoFeasibleStart { fallback: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquationFamily {
    /// Known sampling variances `σᵢ²` act as the variance function.
    GaussianFh,
    /// `V(θ) = θ`.
    PoissonLink,
}

/// The estimating-equation set `{m₁, m₂}` (or `{m₁}` alone when the variance
/// equation is switched off).
#[derive(Debug, Clone, Copy)]
pub struct EstimatingEquations<'a, S: Real> {
    pub family: EquationFamily,
    pub variance_equation: bool,
    pub sigma2: Option<&'a [S]>,
}

impl<'a, S: Real> EstimatingEquations<'a, S> {
    pub fn gaussian_fh(sigma2: &'a [S]) -> Self {
        Self {
            family: EquationFamily::GaussianFh,
            variance_equation: true,
            sigma2: Some(sigma2),
        }
    }

    pub fn poisson_link() -> Self {
        Self {
            family: EquationFamily::PoissonLink,
            variance_equation: true,
            sigma2: None,
        }
    }

    /// Mean equation only (`J = 1`).
    pub fn mean_only(family: EquationFamily) -> Self {
        Self {
            family,
            variance_equation: false,
            sigma2: None,
        }
    }

    pub fn count(&self) -> usize {
        if self.variance_equation {
            2
        } else {
            1
        }
    }

    /// `J × n` residual matrix `mⱼ(zᵢ, θᵢ)`.
    pub fn residuals(&self, z: &[S], theta: &[S]) -> Result<DMatrix<S>, ElError> {
        let n = z.len();
        if theta.len() != n {
            return Err(ElError::DimensionMismatch {
                expected: n,
                found: theta.len(),
            });
        }
        let j = self.count();
        let mut m = DMatrix::zeros(j, n);
        let sigma2 = match (self.family, self.variance_equation) {
            (EquationFamily::GaussianFh, true) => {
                let s = self.sigma2.ok_or(ElError::MissingSamplingVariances)?;
                if s.len() != n {
                    return Err(ElError::DimensionMismatch {
                        expected: n,
                        found: s.len(),
                    });
                }
                Some(s)
            }
            _ => None,
        };
        for i in 0..n {
            let r = z[i] - theta[i];
            if !r.finite() {
                return Err(ElError::NonFiniteResidual { index: i });
            }
            m[(0, i)] = r;
            if self.variance_equation {
                let v = match self.family {
                    EquationFamily::GaussianFh => sigma2.map(|s| s[i]).unwrap_or_else(S::one),
                    EquationFamily::PoissonLink => theta[i],
                };
                if !(v > S::zero()) {
                    return Err(ElError::NonPositiveVariance { index: i });
                }
                let m2 = r * r / v - S::one();
                if !m2.finite() {
                    return Err(ElError::NonFiniteResidual { index: i });
                }
                m[(1, i)] = m2;
            }
        }
        Ok(m)
    }
}

/// Solver settings shared by every EL evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElConfig {
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub method: LambdaMethod,
    /// Relative gradient tolerance for the multiplier solve.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}
fn default_tol() -> f64 {
    1e-13
}
fn default_max_iter() -> usize {
    100
}

impl Default for ElConfig {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            method: LambdaMethod::default(),
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

/// Result of an EL evaluation at a fixed `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElState<S: Real> {
    pub theta: DVector<S>,
    pub lambda: DVector<S>,
    pub weights: DVector<S>,
    /// `Σ log wᵢ`, or `−∞` when infeasible.
    pub log_el: S,
    pub feasible: bool,
}

/// `wᵢ = (1/n) / (1 + Σⱼ λⱼ mⱼᵢ)`.
pub fn compute_weights<S: Real>(
    lambda: &DVector<S>,
    residuals: &DMatrix<S>,
) -> Result<DVector<S>, ElError> {
    if lambda.len() != residuals.nrows() {
        return Err(ElError::DimensionMismatch {
            expected: residuals.nrows(),
            found: lambda.len(),
        });
    }
    let n = residuals.ncols();
    let inv_n = S::one() / S::from_usize_lossy(n);
    let mut w = DVector::zeros(n);
    for i in 0..n {
        let denom = S::one() + residuals.column(i).dot(lambda);
        if !(denom > S::zero()) {
            return Err(ElError::NonPositiveDenominator { index: i });
        }
        w[i] = inv_n / denom;
    }
    Ok(w)
}

/// `Σᵢ log wᵢ` for a feasible state; `−∞` otherwise.
pub fn log_el<S: Real>(state: &ElState<S>) -> S {
    if !state.feasible {
        return S::neg_infinity();
    }
    state.weights.iter().fold(S::zero(), |acc, w| acc + w.ln())
}

/// Simplex membership test with strict inequalities:
/// `|Σwᵢ − 1| < eps`, `wᵢ > 0`, and `|Σᵢ wᵢ mⱼᵢ| < eps` for every `j`.
pub fn check_simplex<S: Real>(weights: &DVector<S>, residuals: &DMatrix<S>, eps: S) -> bool {
    if weights.len() != residuals.ncols() {
        return false;
    }
    if weights.iter().any(|w| !(*w > S::zero()) || !w.finite()) {
        return false;
    }
    let total = weights.sum();
    if !((total - S::one()).abs() < eps) {
        return false;
    }
    let sums = residuals * weights;
    sums.iter().all(|s| s.abs() < eps)
}
