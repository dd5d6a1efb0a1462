//! Graph neural network inference with feature-axis decomposed
//! aggregation and explicit memory accounting.
//!
//! Aggregation splits the feature axis into chunks and aggregates one chunk
//! at a time, so the per-edge message buffer shrinks from `E x L` to
//! `E x chunk_width` while the result stays bit-identical. A
//! [`ledger::MemoryLedger`] charges every large buffer and can enforce a
//! hard byte budget, which turns out-of-memory failures into deterministic,
//! recoverable outcomes.
//!
//! The numeric code is generic over [`Scalar`]; the aliases below fix it
//! to `f32`, the element type of the file formats and the benchmark
//! harness.

pub mod aggregate;
pub mod bench;
pub mod error;
pub mod graph;
pub mod ledger;
pub mod models;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Features = tensor::FeatureMatrix<f32>;
pub type Weights = tensor::LayerWeights<f32>;
pub type Coefficients = aggregate::EdgeWeights<f32>;
pub type Prepared = models::PreparedGraph<f32>;

pub type Features64 = tensor::FeatureMatrix<f64>;
pub type Weights64 = tensor::LayerWeights<f64>;
