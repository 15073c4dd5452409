//! Maximum empirical likelihood fit of the fixed effects with the latent
//! process held at zero. Used to start chains inside the simplex.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{solve_lambda, ElConfig, ElError, ElState, EquationFamily, EstimatingEquations};
use crate::linalg::{wls, WlsFit};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::Real;

/// Largest admissible exponent under the log link.
pub const MAX_LOG_RATE: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Log,
}

impl Link {
    /// Maps a linear predictor to the mean; `None` on log-link overflow.
    pub fn apply<S: Real>(self, eta: S) -> Option<S> {
        match self {
            Link::Identity => eta.finite().then_some(eta),
            Link::Log => (eta.finite() && eta <= S::lit(MAX_LOG_RATE)).then(|| eta.exp()),
        }
    }
}

/// Observations, design and link for a fit with the latent process fixed at zero.
#[derive(Debug, Clone, Copy)]
pub struct MeleProblem<'a, S: Real> {
    pub z: &'a [S],
    pub x: &'a DMatrix<S>,
    pub offset: Option<&'a [S]>,
    pub link: Link,
    pub eqs: EstimatingEquations<'a, S>,
}

impl<S: Real> MeleProblem<'_, S> {
    pub fn theta(&self, beta: &DVector<S>) -> Option<Vec<S>> {
        let eta = self.x * beta;
        (0..self.z.len())
            .map(|i| {
                let off = self.offset.map_or(S::zero(), |o| o[i]);
                self.link.apply(eta[i] + off)
            })
            .collect()
    }

    pub fn evaluate(&self, beta: &DVector<S>, cfg: &ElConfig) -> Option<ElState<S>> {
        let theta = self.theta(beta)?;
        solve_lambda(self.z, &theta, &self.eqs, cfg).ok()
    }
}

#[derive(Debug, Clone)]
pub struct MeleFit<S: Real> {
    pub beta: DVector<S>,
    pub state: ElState<S>,
    pub wls: WlsFit<S>,
}

/// Weighted least squares ignoring latent effects: weights `1/σᵢ²` on
/// `z − offset` for the Gaussian family, and weights `zᵢ + ½` on
/// `log(zᵢ + ½) − offset` for the Poisson family.
pub fn wls_start<S: Real>(problem: &MeleProblem<'_, S>) -> Result<WlsFit<S>, ElError> {
    let n = problem.z.len();
    if problem.x.nrows() != n {
        return Err(ElError::DimensionMismatch {
            expected: n,
            found: problem.x.nrows(),
        });
    }
    let off = |i: usize| problem.offset.map_or(S::zero(), |o| o[i]);
    let half = S::lit(0.5);
    let (y, w): (Vec<S>, Vec<S>) = match (problem.eqs.family, problem.link) {
        (EquationFamily::PoissonLink, _) | (_, Link::Log) => (0..n)
            .map(|i| {
                let c = problem.z[i].max(S::zero()) + half;
                (c.ln() - off(i), c)
            })
            .unzip(),
        (EquationFamily::GaussianFh, Link::Identity) => (0..n)
            .map(|i| {
                let w = problem.eqs.sigma2.map_or(S::one(), |s| S::one() / s[i]);
                (problem.z[i] - off(i), w)
            })
            .unzip(),
    };
    wls(problem.x, &DVector::from_vec(y), &DVector::from_vec(w)).ok_or(ElError::RankDeficientDesign)
}

/// Maximizes `log EL(θ(β))` over `β` by Nelder-Mead, started from the WLS
/// estimate (or the best feasible probe within ±3 WLS standard errors of it).
pub fn mele_fit<S: Real>(
    problem: &MeleProblem<'_, S>,
    cfg: &ElConfig,
) -> Result<MeleFit<S>, ElError> {
    let wls = wls_start(problem)?;
    let m = wls.beta.len();
    let se = wls.standard_errors();
    let step = DVector::from_iterator(
        m,
        (0..m).map(|k| {
            let floor = S::lit(1e-3) * (S::one() + wls.beta[k].abs());
            if se[k].finite() && se[k] > floor {
                se[k]
            } else {
                floor
            }
        }),
    );
    let fallback = || ElError::NoFeasibleStart {
        fallback: wls.beta.iter().map(|v| v.as_f64()).collect(),
    };
    let neg_log_el = |beta: &DVector<S>| match problem.evaluate(beta, cfg) {
        Some(s) if s.feasible => -s.log_el,
        _ => S::infinity(),
    };

    let mut start = wls.beta.clone();
    let mut start_value = neg_log_el(&start);
    if !start_value.finite() {
        // Halton probes over the box β_wls ± 3·SE
        let primes = [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
        for k in 1..=512u64 {
            let probe = DVector::from_iterator(
                m,
                (0..m).map(|d| {
                    let u = halton(k, primes[d % primes.len()]);
                    wls.beta[d] + step[d] * S::lit(6.0 * u - 3.0)
                }),
            );
            let v = neg_log_el(&probe);
            if v < start_value {
                start = probe;
                start_value = v;
            }
        }
        if !start_value.finite() {
            return Err(fallback());
        }
    }

    let opts = NelderMeadOptions {
        max_iter: 4000,
        f_tol: 1e-12,
        x_tol: 1e-10,
    };
    let mut best = nelder_mead(neg_log_el, &start, &step, opts);
    for _ in 0..2 {
        let restart = nelder_mead(neg_log_el, &best.x, &(&step * S::lit(0.1)), opts);
        let improved = restart.value < best.value - S::lit(1e-12);
        if restart.value <= best.value {
            best = restart;
        }
        if !improved {
            break;
        }
    }
    let state = problem
        .evaluate(&best.x, cfg)
        .filter(|s| s.feasible)
        .ok_or_else(fallback)?;
    Ok(MeleFit {
        beta: best.x,
        state,
        wls,
    })
}

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}
