use nalgebra::DMatrix;

use super::SpatialError;
use crate::Real;

/// Relative diagonal ridge added before factorization.
pub const COVARIANCE_JITTER: f64 = 1e-8;

/// Point-referenced locations with an exponential covariance
/// `σ_y² exp(−‖sᵢ − sⱼ‖ / φ)`. Coordinates are planar; any map projection
/// happens before they reach this type.
#[derive(Debug, Clone, PartialEq)]
pub struct PointField<S: Real> {
    pub coords: Vec<[S; 2]>,
    pub sigma2_y: S,
    pub phi: S,
}

pub fn distance_matrix<S: Real>(coords: &[[S; 2]]) -> DMatrix<S> {
    let n = coords.len();
    DMatrix::from_fn(n, n, |i, j| {
        let dx = coords[i][0] - coords[j][0];
        let dy = coords[i][1] - coords[j][1];
        (dx * dx + dy * dy).sqrt()
    })
}

/// Rejects repeated locations, which make the covariance singular.
pub fn check_distinct<S: Real>(coords: &[[S; 2]]) -> Result<(), SpatialError> {
    for i in 0..coords.len() {
        for j in 0..i {
            if coords[i][0] == coords[j][0] && coords[i][1] == coords[j][1] {
                return Err(SpatialError::DuplicateCoordinates { a: j, b: i });
            }
        }
    }
    Ok(())
}

/// Exponential covariance from a precomputed distance matrix, jitter included.
pub fn exp_covariance_from_distances<S: Real>(
    dist: &DMatrix<S>,
    sigma2_y: S,
    phi: S,
) -> Result<DMatrix<S>, SpatialError> {
    if !(sigma2_y > S::zero() && phi > S::zero() && sigma2_y.finite() && phi.finite()) {
        return Err(SpatialError::NonPositiveParams);
    }
    let jitter = S::one() + S::lit(COVARIANCE_JITTER);
    Ok(DMatrix::from_fn(dist.nrows(), dist.ncols(), |i, j| {
        if i == j {
            sigma2_y * jitter
        } else {
            sigma2_y * (-dist[(i, j)] / phi).exp()
        }
    }))
}

pub fn exp_covariance<S: Real>(field: &PointField<S>) -> Result<DMatrix<S>, SpatialError> {
    check_distinct(&field.coords)?;
    exp_covariance_from_distances(&distance_matrix(&field.coords), field.sigma2_y, field.phi)
}
