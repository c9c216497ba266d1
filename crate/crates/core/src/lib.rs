//! Graph classification building blocks: an improved GCN layer, top-k
//! pooling, jumping-knowledge readouts, variance-rescaling initialisation,
//! shallow baselines and a k-fold training harness with diagnostics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`, which is what the dataset loader,
//! training reports and the CLI use.

pub mod diagnostics;
pub mod error;
pub mod graphdata;
pub mod init;
pub mod layers;
pub mod models;
pub mod numcore;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = numcore::Matrix<f64>;
pub type Matrix32 = numcore::Matrix<f32>;
pub type SparseAdj64 = numcore::SparseAdj<f64>;
pub type Graph64 = graphdata::Graph<f64>;
pub type Dataset64 = graphdata::Dataset<f64>;
pub type Model64 = models::Model<f64>;
pub type Model32 = models::Model<f32>;
