pub mod data;
pub mod el;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod mcmc;
pub mod models;
pub mod optim;
mod real;
pub mod spatial;

pub use real::Real;

pub type ObservedDatasetF64 = data::ObservedDataset<f64>;
pub type ModelContextF64 = models::ModelContext<f64>;
pub type SpatialBasisF64 = spatial::SpatialBasis<f64>;
pub type ElStateF64 = el::ElState<f64>;
