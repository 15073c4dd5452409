//! Derivative-free minimization (Nelder-Mead) used by the squared-constraint
//! multiplier search and by the maximum-EL fit.

use nalgebra::DVector;

use crate::Real;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop when the spread of objective values across the simplex falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter (inf-norm) falls below this.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            f_tol: 1e-12,
            x_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum<S: Real> {
    pub x: DVector<S>,
    pub value: S,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0`; the initial simplex offsets coordinate `k`
/// by `step[k]`. Non-finite objective values are treated as `+inf`, so `f` may
/// signal an inadmissible point by returning `inf` or `NaN`.
pub fn nelder_mead<S, F>(
    mut f: F,
    x0: &DVector<S>,
    step: &DVector<S>,
    opts: NelderMeadOptions,
) -> Minimum<S>
where
    S: Real,
    F: FnMut(&DVector<S>) -> S,
{
    let dim = x0.len();
    let mut eval = |x: &DVector<S>| {
        let v = f(x);
        if v.finite() {
            v
        } else {
            S::infinity()
        }
    };

    let mut simplex: Vec<(DVector<S>, S)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.clone(), eval(x0)));
    for k in 0..dim {
        let mut x = x0.clone();
        x[k] += step[k];
        let v = eval(&x);
        simplex.push((x, v));
    }

    let (alpha, gamma, rho, sigma) = (S::one(), S::lit(2.0), S::lit(0.5), S::lit(0.5));
    let f_tol = S::lit(opts.f_tol);
    let x_tol = S::lit(opts.x_tol);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = if worst.finite() {
            (worst - best).abs()
        } else {
            S::infinity()
        };
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| (x - &simplex[0].0).amax())
            .fold(S::zero(), |a, b| if b > a { b } else { a });
        if spread <= f_tol && diameter <= x_tol {
            converged = true;
            break;
        }
        if diameter <= x_tol * S::lit(1e-3) {
            converged = best.finite();
            break;
        }
        iterations += 1;

        let mut centroid = DVector::zeros(dim);
        for (x, _) in &simplex[..dim] {
            centroid += x;
        }
        centroid /= S::from_usize_lossy(dim);

        let worst_x = simplex[dim].0.clone();
        let reflected = &centroid + (&centroid - &worst_x) * alpha;
        let fr = eval(&reflected);

        if fr < simplex[0].1 {
            let expanded = &centroid + (&reflected - &centroid) * gamma;
            let fe = eval(&expanded);
            simplex[dim] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < worst {
            let c = &centroid + (&reflected - &centroid) * rho;
            let v = eval(&c);
            (c, v)
        } else {
            let c = &centroid + (&worst_x - &centroid) * rho;
            let v = eval(&c);
            (c, v)
        };
        if fc < worst.min(fr) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        // shrink toward the best vertex
        let best_x = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let x = &best_x + (&entry.0 - &best_x) * sigma;
            let v = eval(&x);
            *entry = (x, v);
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &DVector<f64>| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(
            f,
            &DVector::from_vec(vec![-1.2, 1.0]),
            &DVector::from_vec(vec![0.5, 0.5]),
            NelderMeadOptions {
                max_iter: 5000,
                ..Default::default()
            },
        );
        assert!((m.x[0] - 1.0).abs() < 1e-4, "{:?}", m.x);
        assert!((m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn treats_nan_as_infeasible() {
        // admissible region x > 0, minimum at x = 2
        let f = |x: &DVector<f64>| {
            if x[0] <= 0.0 {
                f64::NAN
            } else {
                (x[0] - 2.0).powi(2)
            }
        };
        let m = nelder_mead(
            f,
            &DVector::from_vec(vec![0.5]),
            &DVector::from_vec(vec![-1.0]),
            NelderMeadOptions::default(),
        );
        assert!((m.x[0] - 2.0).abs() < 1e-5);
    }
}
