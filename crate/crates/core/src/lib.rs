pub mod chain;
pub mod detect;
pub mod disasm;
pub mod extract;
pub mod features;
pub mod gateway;
pub mod keccak;
pub mod model;
pub mod pipeline;
pub mod primitives;
pub mod report;
pub mod scalar;
pub mod subgraph;
pub mod synthetic;
pub mod trace;
pub mod tree;

pub use primitives::{Address, Bytes, Selector, TxHash, Wei};
pub use scalar::Scalar;

/// Exact non-negative ratio used for frequencies, densities and recall.
pub type Rational = num_rational::Ratio<u64>;

pub type AnomalyModelF64 = model::AnomalyModel<f64>;
pub type AnomalyModelF32 = model::AnomalyModel<f32>;
pub type PathFeaturesF64 = features::PathFeatures<f64>;
pub type PipelineOptionsF64 = pipeline::PipelineOptions<f64>;
