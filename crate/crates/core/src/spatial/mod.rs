//! Spatial structure: lattice graphs with their intrinsic CAR precision and
//! Moran eigenbasis, and exponential covariances for point-referenced data.
//!
//! The reduced process lives in the span of the leading eigenvectors of
//! `P_c B P_c`, where `P_c = I − X(X'X)⁻¹X'` projects off the design. When the
//! design carries an intercept, `M'(B₊ − B)M` is positive definite for any
//! connected graph, which turns the singular ICAR density into a proper one.

mod covariance;
mod graph;

pub use covariance::{
    check_distinct, distance_matrix, exp_covariance, exp_covariance_from_distances, PointField,
    COVARIANCE_JITTER,
};
pub use graph::LatticeGraph;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{chol_logdet, min_eigenvalue, sorted_symmetric_eigen};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpatialError {
    #[error("self-loop at node {node}")]
    SelfLoop { node: usize },
    #[error("duplicate edge {a}-{b}")]
    DuplicateEdge { a: usize, b: usize },
    #[error("node {node} out of range for a graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("node {node} has no neighbors")]
    IsolatedNode { node: usize },
    #[error("graph is not connected")]
    DisconnectedGraph,
    #[error("design matrix is rank deficient")]
    RankDeficientDesign,
    #[error("design matrix has no intercept column")]
    NoIntercept,
    #[error("design has {found} rows but the graph has {expected} nodes")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no eigenvectors retained by the basis policy")]
    EmptyBasis,
    #[error("reduced precision is not positive definite (min eigenvalue {min_eig:e})")]
    PdCheckFailed { min_eig: f64 },
    #[error("locations {a} and {b} share coordinates")]
    DuplicateCoordinates { a: usize, b: usize },
    #[error("covariance parameters must be positive and finite")]
    NonPositiveParams,
}

/// How many Moran eigenvectors to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QPolicy {
    /// Every eigenvector with a positive eigenvalue.
    #[default]
    AllPositive,
    /// The leading `⌈p·n⌉` positive-eigenvalue eigenvectors.
    Fraction(f64),
    /// Every direction orthogonal to the design (`q = n − m`), including those
    /// with zero or negative Moran eigenvalues.
    Full,
}

/// Relative cut-off below which a Moran eigenvalue counts as zero.
pub const EIG_TOL: f64 = 1e-8;

/// `Q = B₊ − B`, the ICAR precision with unit scale.
pub fn icar_precision<S: Real>(graph: &LatticeGraph) -> Result<DMatrix<S>, SpatialError> {
    let degrees = graph.degrees();
    if let Some(node) = degrees.iter().position(|&d| d == 0) {
        return Err(SpatialError::IsolatedNode { node });
    }
    let mut q = -graph.adjacency::<S>();
    for (i, &d) in degrees.iter().enumerate() {
        q[(i, i)] = S::from_usize_lossy(d);
    }
    Ok(q)
}

/// `P_c = I − X(X'X)⁻¹X'`.
pub fn centering_projection<S: Real>(x: &DMatrix<S>) -> Result<DMatrix<S>, SpatialError> {
    let (n, m) = x.shape();
    if m == 0 || n < m {
        return Err(SpatialError::RankDeficientDesign);
    }
    let sv = x.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > S::zero()) || min <= max * S::lit(1e-10) {
        return Err(SpatialError::RankDeficientDesign);
    }
    let xtx = x.transpose() * x;
    let chol = Cholesky::new(xtx).ok_or(SpatialError::RankDeficientDesign)?;
    let hat = x * chol.solve(&x.transpose());
    let mut p = DMatrix::identity(n, n) - hat;
    p = (&p + p.transpose()) * S::lit(0.5);
    Ok(p)
}

/// True when some column of `x` is identically one.
pub fn has_intercept_column<S: Real>(x: &DMatrix<S>) -> bool {
    x.column_iter()
        .any(|c| c.iter().all(|v| (*v - S::one()).abs() <= S::lit(1e-12)))
}

/// True when the one vector lies in the column space of `x`.
pub fn ones_in_column_space<S: Real>(x: &DMatrix<S>) -> bool {
    match centering_projection(x) {
        Ok(p) => {
            let ones = DVector::from_element(x.nrows(), S::one());
            (&p * ones).amax() <= S::lit(1e-8)
        }
        Err(_) => false,
    }
}

/// Moran basis and reduced ICAR precision for a lattice.
#[derive(Debug, Clone)]
pub struct SpatialBasis<S: Real> {
    pub adjacency: DMatrix<S>,
    pub precision: DMatrix<S>,
    pub projection: DMatrix<S>,
    /// `n × q`, orthonormal columns orthogonal to the design.
    pub moran: DMatrix<S>,
    /// `M'QM`.
    pub reduced_precision: DMatrix<S>,
    pub reduced_chol: Cholesky<S, Dyn>,
    /// `log det(M'QM)`.
    pub reduced_logdet: S,
    /// Retained eigenvalues of `P_c B P_c`, descending.
    pub eigvals: DVector<S>,
}

impl<S: Real> SpatialBasis<S> {
    pub fn q(&self) -> usize {
        self.moran.ncols()
    }

    pub fn n(&self) -> usize {
        self.moran.nrows()
    }

    /// `y*' M'QM y*`.
    pub fn quad_form(&self, ystar: &DVector<S>) -> S {
        (&self.reduced_precision * ystar).dot(ystar)
    }
}

/// Eigenvalues of `P_c B P_c` (descending), without any truncation.
pub fn moran_spectrum<S: Real>(
    graph: &LatticeGraph,
    x: &DMatrix<S>,
) -> Result<DVector<S>, SpatialError> {
    let p = centering_projection(x)?;
    let b = graph.adjacency::<S>();
    Ok(sorted_symmetric_eigen(&(&p * b * &p)).0)
}

/// Builds the Moran basis, requiring an explicit intercept column.
pub fn moran_basis<S: Real>(
    graph: &LatticeGraph,
    x: &DMatrix<S>,
    policy: QPolicy,
) -> Result<SpatialBasis<S>, SpatialError> {
    if x.nrows() == graph.n() && !has_intercept_column(x) {
        return Err(SpatialError::NoIntercept);
    }
    build_basis(graph, x, policy)
}

fn build_basis<S: Real>(
    graph: &LatticeGraph,
    x: &DMatrix<S>,
    policy: QPolicy,
) -> Result<SpatialBasis<S>, SpatialError> {
    let n = graph.n();
    if x.nrows() != n {
        return Err(SpatialError::DimensionMismatch {
            expected: n,
            found: x.nrows(),
        });
    }
    if !graph.is_connected() {
        return Err(SpatialError::DisconnectedGraph);
    }
    let precision = icar_precision::<S>(graph)?;
    let projection = centering_projection(x)?;
    let adjacency = graph.adjacency::<S>();

    // Push the design directions to −κ, below every eigenvalue of P_c B P_c on
    // range(P_c) (bounded in magnitude by the maximum degree), so the top n − m
    // eigenvectors always span range(P_c).
    let max_degree = graph.degrees().into_iter().max().unwrap_or(0);
    let kappa = S::from_usize_lossy(2 * max_degree + 1);
    let shifted =
        &projection * &adjacency * &projection - (DMatrix::identity(n, n) - &projection) * kappa;
    let (values, vectors) = sorted_symmetric_eigen(&shifted);

    let top = values[0];
    let tol = S::lit(EIG_TOL) * top.abs().max(S::lit(1e-300));
    let positive = values.iter().take_while(|v| **v > tol).count();
    let q = match policy {
        QPolicy::AllPositive => positive,
        QPolicy::Fraction(p) => {
            let want = (p * n as f64).ceil().max(0.0) as usize;
            want.min(positive)
        }
        QPolicy::Full => n - x.ncols(),
    };
    if q == 0 {
        return Err(SpatialError::EmptyBasis);
    }
    let moran = vectors.columns(0, q).clone_owned();
    let eigvals = values.rows(0, q).clone_owned();
    let mut reduced_precision = moran.transpose() * &precision * &moran;
    reduced_precision = (&reduced_precision + reduced_precision.transpose()) * S::lit(0.5);
    let min_eig = min_eigenvalue(&reduced_precision);
    if !(min_eig > S::zero()) {
        return Err(SpatialError::PdCheckFailed {
            min_eig: min_eig.as_f64(),
        });
    }
    let reduced_chol =
        Cholesky::new(reduced_precision.clone()).ok_or(SpatialError::PdCheckFailed {
            min_eig: min_eig.as_f64(),
        })?;
    let reduced_logdet = chol_logdet(&reduced_chol);
    Ok(SpatialBasis {
        adjacency,
        precision,
        projection,
        moran,
        reduced_precision,
        reduced_chol,
        reduced_logdet,
        eigvals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem1Report {
    pub min_eig: f64,
    pub pd: bool,
    pub q: usize,
}

/// Smallest eigenvalue of `M'QM` under [`QPolicy::AllPositive`].
///
/// The premise checked here is `1 ∈ C(X)`; an explicit intercept column is one
/// way to satisfy it, dummy columns summing to one are another.
pub fn verify_theorem1<S: Real>(
    graph: &LatticeGraph,
    x: &DMatrix<S>,
) -> Result<Theorem1Report, SpatialError> {
    verify_theorem1_with(graph, x, QPolicy::AllPositive)
}

pub fn verify_theorem1_with<S: Real>(
    graph: &LatticeGraph,
    x: &DMatrix<S>,
    policy: QPolicy,
) -> Result<Theorem1Report, SpatialError> {
    if x.nrows() == graph.n() && !ones_in_column_space(x) {
        return Err(SpatialError::NoIntercept);
    }
    let basis = build_basis(graph, x, policy)?;
    let min_eig = min_eigenvalue(&basis.reduced_precision).as_f64();
    Ok(Theorem1Report {
        min_eig,
        pd: min_eig > 0.0,
        q: basis.q(),
    })
}
