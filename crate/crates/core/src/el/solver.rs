//! Lagrange-multiplier solves for the EL weights.
//!
//! Two routes are available:
//!
//! * [`LambdaMethod::Dual`] maximizes the concave dual `Σᵢ log*(1 + λ'mᵢ)` by
//!   damped Newton, where `log*` is the logarithm continued below `1/n` by its
//!   second-order Taylor polynomial so that the objective is finite everywhere.
//! * [`LambdaMethod::SquaredObjective`] minimizes `Σⱼ (Σᵢ wᵢ(λ) mⱼᵢ)²` with
//!   Nelder-Mead, as a general-purpose optimizer would.
//!
//! Both report feasibility through the same thresholded simplex check.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_simplex, compute_weights, ElConfig, ElError, ElState, EstimatingEquations};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::Real;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMethod {
    #[default]
    Dual,
    SquaredObjective,
}

#[derive(Debug, Clone)]
pub struct LambdaSolution<S: Real> {
    pub lambda: DVector<S>,
    /// Weights `1/(n(1 + λ'mᵢ))`, or `None` if some denominator is non-positive.
    pub weights: Option<DVector<S>>,
    pub feasible: bool,
    pub converged: bool,
}

/// Solves for `λ` given a `J × n` residual matrix.
pub fn solve_lambda_residuals<S: Real>(
    residuals: &DMatrix<S>,
    cfg: &ElConfig,
) -> Result<LambdaSolution<S>, ElError> {
    let (j, n) = residuals.shape();
    if n < j + 1 {
        return Err(ElError::TooFewObservations {
            n,
            equations: j,
            needed: j + 1,
        });
    }
    if let Some(idx) = residuals.iter().position(|v| !v.finite()) {
        return Err(ElError::NonFiniteResidual { index: idx / j });
    }
    let (lambda, converged) = match cfg.method {
        LambdaMethod::Dual => dual_newton(residuals, S::lit(cfg.tol), cfg.max_iter),
        LambdaMethod::SquaredObjective => squared_objective(residuals),
    };
    let weights = compute_weights(&lambda, residuals).ok();
    let feasible = weights
        .as_ref()
        .is_some_and(|w| check_simplex(w, residuals, S::lit(cfg.eps)));
    Ok(LambdaSolution {
        lambda,
        weights,
        feasible,
        converged,
    })
}

/// Evaluates the EL at `theta`. Infeasible problems still return the
/// multipliers (and weights where defined) for diagnostics, with
/// `log_el = −∞`.
pub fn solve_lambda<S: Real>(
    z: &[S],
    theta: &[S],
    eqs: &EstimatingEquations<'_, S>,
    cfg: &ElConfig,
) -> Result<ElState<S>, ElError> {
    if theta.iter().any(|t| !t.finite()) {
        let index = theta.iter().position(|t| !t.finite()).unwrap_or(0);
        return Err(ElError::NonFiniteResidual { index });
    }
    let residuals = eqs.residuals(z, theta)?;
    let sol = solve_lambda_residuals(&residuals, cfg)?;
    let n = z.len();
    let feasible = sol.feasible;
    let weights = sol
        .weights
        .unwrap_or_else(|| DVector::from_element(n, S::lit(f64::NAN)));
    let log_el = if feasible {
        weights.iter().fold(S::zero(), |acc, w| acc + w.ln())
    } else {
        S::neg_infinity()
    };
    Ok(ElState {
        theta: DVector::from_column_slice(theta),
        lambda: sol.lambda,
        weights,
        log_el,
        feasible,
    })
}

// log* and its first two derivatives, continued quadratically below 1/n.
#[inline]
fn log_star<S: Real>(z: S, n: S) -> (S, S, S) {
    let inv_n = S::one() / n;
    if z >= inv_n {
        (z.ln(), S::one() / z, -S::one() / (z * z))
    } else {
        let nz = n * z;
        (
            -n.ln() - S::lit(1.5) + S::lit(2.0) * nz - nz * nz * S::lit(0.5),
            S::lit(2.0) * n - n * n * z,
            -n * n,
        )
    }
}

fn dual_value<S: Real>(m: &DMatrix<S>, lambda: &DVector<S>, n: S) -> S {
    m.column_iter().fold(S::zero(), |acc, col| {
        acc + log_star(S::one() + col.dot(lambda), n).0
    })
}

fn dual_newton<S: Real>(m: &DMatrix<S>, tol: S, max_iter: usize) -> (DVector<S>, bool) {
    let (j, ncols) = m.shape();
    let n = S::from_usize_lossy(ncols);
    let scale = m.amax().max(S::lit(1e-300));
    let grad_tol = tol * n * scale;
    let mut lambda = DVector::zeros(j);
    let mut value = dual_value(m, &lambda, n);
    let mut polish = 0;

    for _ in 0..max_iter {
        let mut grad = DVector::zeros(j);
        let mut neg_hess = DMatrix::zeros(j, j);
        for col in m.column_iter() {
            let (_, d1, d2) = log_star(S::one() + col.dot(&lambda), n);
            grad.axpy(d1, &col, S::one());
            neg_hess.ger(-d2, &col, &col, S::one());
        }
        if grad.amax() <= grad_tol {
            return (lambda, true);
        }
        let direction = match Cholesky::new(neg_hess.clone()) {
            Some(c) => c.solve(&grad),
            None => {
                let ridge = neg_hess.diagonal().amax().max(S::one()) * S::lit(1e-10);
                let mut h = neg_hess;
                for k in 0..j {
                    h[(k, k)] += ridge;
                }
                match Cholesky::new(h) {
                    Some(c) => c.solve(&grad),
                    None => grad.clone(),
                }
            }
        };
        let slope = grad.dot(&direction);
        // Once the Newton decrement is at the rounding level of the objective
        // the line search cannot tell steps apart; finish with plain Newton steps.
        if slope <= S::lit(4.0 * f64::EPSILON) * value.abs().max(S::one()) {
            if polish == 2 {
                return (lambda, true);
            }
            lambda += direction;
            value = dual_value(m, &lambda, n);
            polish += 1;
            continue;
        }
        let mut step = S::one();
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = &lambda + &direction * step;
            let v = dual_value(m, &candidate, n);
            if v.finite() && v >= value + S::lit(1e-4) * step * slope {
                lambda = candidate;
                value = v;
                accepted = true;
                break;
            }
            step *= S::lit(0.5);
        }
        if !accepted {
            return (lambda, false);
        }
        // The dual is unbounded when 0 is outside the convex hull of the residuals.
        if !lambda.amax().finite() || lambda.amax() * scale > S::lit(1e12) {
            return (lambda, false);
        }
    }
    (lambda, false)
}

fn squared_objective<S: Real>(m: &DMatrix<S>) -> (DVector<S>, bool) {
    let j = m.nrows();
    let scale = m.amax().max(S::lit(1e-300));
    let objective = |lambda: &DVector<S>| match compute_weights(lambda, m) {
        Ok(w) => (m * w).norm_squared(),
        Err(_) => S::infinity(),
    };
    let step = DVector::from_element(j, S::lit(0.1) / scale);
    let mut best = nelder_mead(
        objective,
        &DVector::zeros(j),
        &step,
        NelderMeadOptions {
            max_iter: 20_000,
            f_tol: 1e-30,
            x_tol: 1e-14,
        },
    );
    // restart once from the returned point to escape a collapsed simplex
    let restart = nelder_mead(
        objective,
        &best.x,
        &(step * S::lit(0.01)),
        NelderMeadOptions {
            max_iter: 20_000,
            f_tol: 1e-30,
            x_tol: 1e-15,
        },
    );
    if restart.value <= best.value {
        best = restart;
    }
    (best.x, best.converged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::el::{log_el, EquationFamily};

    /// Root of Σ mᵢ / (1 + λ mᵢ) on the admissible interval, by bisection.
    fn bisection_oracle(m: &[f64]) -> f64 {
        let lo_m = m.iter().copied().fold(f64::INFINITY, f64::min);
        let hi_m = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo_m < 0.0 && hi_m > 0.0);
        let g = |l: f64| m.iter().map(|&v| v / (1.0 + l * v)).sum::<f64>();
        let mut lo = -1.0 / hi_m;
        let mut hi = -1.0 / lo_m;
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn sample_mean_gives_zero_multiplier() {
        let z = [0.3, 1.7, 2.2, -0.4, 0.9];
        let mean = z.iter().sum::<f64>() / 5.0;
        let theta = [mean; 5];
        let eqs = EstimatingEquations::mean_only(EquationFamily::GaussianFh);
        let state = solve_lambda(&z, &theta, &eqs, &ElConfig::default()).unwrap();
        assert!(state.feasible);
        assert_eq!(state.lambda[0], 0.0);
        assert!(state.weights.iter().all(|&w| w == 0.2));
    }

    #[test]
    fn matches_bisection_oracle_on_small_case() {
        let z = [0.0, 1.0, 2.0];
        let theta = [0.9; 3];
        let eqs = EstimatingEquations::mean_only(EquationFamily::GaussianFh);
        let state = solve_lambda(&z, &theta, &eqs, &ElConfig::default()).unwrap();
        let m: Vec<f64> = z.iter().map(|v| v - 0.9).collect();
        let lam = bisection_oracle(&m);
        assert!(state.feasible);
        assert!((state.lambda[0] - lam).abs() < 1e-6);
        let mut oracle_log_el = 0.0;
        for i in 0..3 {
            let w = 1.0 / (3.0 * (1.0 + lam * m[i]));
            oracle_log_el += w.ln();
            assert!((state.weights[i] - w).abs() < 1e-6);
        }
        assert!((log_el(&state) - oracle_log_el).abs() < 1e-6);
    }

    #[test]
    fn zero_residuals_violate_variance_equation() {
        let z = [1.0, 2.0, 3.0, 4.0];
        let s2 = [1.0; 4];
        let eqs = EstimatingEquations::gaussian_fh(&s2);
        let state = solve_lambda(&z, &z, &eqs, &ElConfig::default()).unwrap();
        assert!(!state.feasible);
        assert_eq!(state.log_el, f64::NEG_INFINITY);
    }

    #[test]
    fn mean_outside_hull_is_infeasible() {
        let z = [1.0, 2.0, 3.0];
        let eqs = EstimatingEquations::mean_only(EquationFamily::GaussianFh);
        let state = solve_lambda(&z, &[5.0; 3], &eqs, &ElConfig::default()).unwrap();
        assert!(!state.feasible);
        assert_eq!(log_el(&state), f64::NEG_INFINITY);
    }

    #[test]
    fn too_few_observations() {
        let eqs = EstimatingEquations::gaussian_fh(&[1.0, 1.0]);
        assert_eq!(
            solve_lambda(&[1.0, 2.0], &[1.5, 1.5], &eqs, &ElConfig::default()).unwrap_err(),
            ElError::TooFewObservations {
                n: 2,
                equations: 2,
                needed: 3
            }
        );
    }

    #[test]
    fn non_finite_theta_rejected() {
        let eqs = EstimatingEquations::mean_only(EquationFamily::GaussianFh);
        let err = solve_lambda(
            &[1.0, 2.0, 3.0],
            &[1.0, f64::INFINITY, 1.0],
            &eqs,
            &ElConfig::default(),
        );
        assert_eq!(err.unwrap_err(), ElError::NonFiniteResidual { index: 1 });
    }

    #[test]
    fn squared_objective_agrees_with_dual() {
        let z = [0.1f64, 1.9, 2.4, -0.8, 1.1, 0.7, 3.0, -0.2];
        let theta = [0.8; 8];
        let s2 = [1.0; 8];
        let eqs = EstimatingEquations::gaussian_fh(&s2);
        let dual = solve_lambda(&z, &theta, &eqs, &ElConfig::default()).unwrap();
        let sq_cfg = ElConfig {
            method: LambdaMethod::SquaredObjective,
            ..ElConfig::default()
        };
        let sq = solve_lambda(&z, &theta, &eqs, &sq_cfg).unwrap();
        assert!(dual.feasible && sq.feasible);
        assert!(
            (&dual.lambda - &sq.lambda).amax() < 1e-4,
            "{} vs {}",
            dual.lambda,
            sq.lambda
        );
        assert!((dual.log_el - sq.log_el).abs() < 1e-4);
    }

    #[test]
    fn generic_over_f32() {
        let z = [0.0f32, 1.0, 2.0];
        let eqs = EstimatingEquations::mean_only(EquationFamily::GaussianFh);
        let cfg = ElConfig {
            tol: 1e-6,
            ..ElConfig::default()
        };
        let state = solve_lambda(&z, &[0.9f32; 3], &eqs, &cfg).unwrap();
        assert!(state.feasible);
        let lam = bisection_oracle(&[-0.9, 0.1, 1.1]) as f32;
        assert!((state.lambda[0] - lam).abs() < 1e-4);
    }
}
