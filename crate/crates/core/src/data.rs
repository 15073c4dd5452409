//! In-memory observed dataset shared by the model, sampler and harness layers.

use nalgebra::DMatrix;

use crate::spatial::LatticeGraph;
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub enum SpatialRef<S: Real> {
    Lattice(LatticeGraph),
    Points(Vec<[S; 2]>),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedDataset<S: Real> {
    pub ids: Vec<String>,
    pub z: Vec<S>,
    /// `n × m` design, intercept included.
    pub x: DMatrix<S>,
    pub covariate_names: Vec<String>,
    pub sigma2: Option<Vec<S>>,
    /// Additive term on the linear-predictor scale, e.g. `log Eᵢ`.
    pub offset: Option<Vec<S>>,
    pub spatial: SpatialRef<S>,
}

impl<S: Real> ObservedDataset<S> {
    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    /// Copy with `z` replaced, for synthetic replicates.
    pub fn with_z(&self, z: Vec<S>) -> Self {
        assert_eq!(z.len(), self.n());
        Self { z, ..self.clone() }
    }
}
