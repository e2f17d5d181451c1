//! Graph filter-bank convolution networks for graph classification.

pub mod bank;
pub mod check;
pub mod data;
pub mod graph;
pub mod model;
mod scalar;
pub mod spectral;
pub mod train;

pub use scalar::Scalar;

/// Concrete `f64` aliases; the training stack and CLI use these.
pub type Graph = graph::Graph<f64>;
pub type Batch = graph::Batch<f64>;
pub type FilterCoeffs = spectral::FilterCoeffs<f64>;
pub type SpectralBasis = spectral::SpectralBasis<f64>;
pub type BankLayerParams = bank::BankLayerParams<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type ModelGrads = model::ModelGrads<f64>;
