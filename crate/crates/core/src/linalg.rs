//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::Real;

/// Weighted least squares fit `min Σ wᵢ (yᵢ − xᵢ'β)²`.
#[derive(Debug, Clone)]
pub struct WlsFit<S: Real> {
    pub beta: DVector<S>,
    /// `(X'WX)⁻¹`.
    pub cov_unscaled: DMatrix<S>,
    /// Weighted residual variance `Σ wᵢ rᵢ² / (n − m)`; 1 when `n = m`.
    pub dispersion: S,
}

impl<S: Real> WlsFit<S> {
    /// Standard errors with the estimated dispersion.
    pub fn standard_errors(&self) -> DVector<S> {
        self.cov_unscaled
            .diagonal()
            .map(|v| (v * self.dispersion).sqrt())
    }

    /// Standard errors treating the weights as exact inverse variances.
    pub fn standard_errors_known_scale(&self) -> DVector<S> {
        self.cov_unscaled.diagonal().map(|v| v.sqrt())
    }
}

/// Returns `None` when `X'WX` is not positive definite.
pub fn wls<S: Real>(x: &DMatrix<S>, y: &DVector<S>, w: &DVector<S>) -> Option<WlsFit<S>> {
    let (n, m) = x.shape();
    if y.len() != n || w.len() != n || n < m {
        return None;
    }
    let mut xtwx = DMatrix::zeros(m, m);
    let mut xtwy = DVector::zeros(m);
    for i in 0..n {
        let row = x.row(i);
        for a in 0..m {
            xtwy[a] += w[i] * row[a] * y[i];
            for b in 0..m {
                xtwx[(a, b)] += w[i] * row[a] * row[b];
            }
        }
    }
    let chol = Cholesky::new(xtwx)?;
    let beta = chol.solve(&xtwy);
    let cov_unscaled = chol.inverse();
    let resid = y - x * &beta;
    let rss: S = (0..n).fold(S::zero(), |acc, i| acc + w[i] * resid[i] * resid[i]);
    let dispersion = if n > m {
        rss / S::from_usize_lossy(n - m)
    } else {
        S::one()
    };
    Some(WlsFit {
        beta,
        cov_unscaled,
        dispersion,
    })
}

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue, with each
/// eigenvector's first entry of magnitude above `1e-10` made positive.
pub fn sorted_symmetric_eigen<S: Real>(a: &DMatrix<S>) -> (DVector<S>, DMatrix<S>) {
    let sym = (a + a.transpose()) * S::lit(0.5);
    let SymmetricEigen {
        eigenvalues,
        eigenvectors,
    } = SymmetricEigen::new(sym);
    let n = eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eigenvalues[j]
            .partial_cmp(&eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| eigenvalues[k]));
    let mut vectors = DMatrix::zeros(a.nrows(), n);
    let tiny = S::lit(1e-10);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eigenvectors.column(k).clone_owned();
        if let Some(first) = v.iter().copied().find(|x| x.abs() > tiny) {
            if first < S::zero() {
                v.neg_mut();
            }
        }
        vectors.set_column(col, &v);
    }
    (values, vectors)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<S: Real>(a: &DMatrix<S>) -> S {
    let sym = (a + a.transpose()) * S::lit(0.5);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(S::infinity(), |a, b| if b < a { b } else { a })
}

/// Log-determinant of an SPD matrix from its Cholesky factor.
pub fn chol_logdet<S: Real>(chol: &Cholesky<S, Dyn>) -> S {
    chol.l_dirty()
        .diagonal()
        .iter()
        .fold(S::zero(), |acc, d| acc + d.ln())
        * S::lit(2.0)
}

/// Quadratic form `v' A⁻¹ v` from the Cholesky factor of `A`.
pub fn chol_quad_inv<S: Real>(chol: &Cholesky<S, Dyn>, v: &DVector<S>) -> S {
    let mut u = v.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut u);
    u.norm_squared()
}

/// Linear-interpolation quantile (the "type 7" rule) of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
