//! Dense matrices, sparse adjacency and a seeded RNG. Every layer's
//! forward and backward pass is written on top of these.

mod matrix;
mod rng;
mod sparse;

pub use matrix::{col_stats, matmul, pooled_stats, Matrix};
pub use rng::{rng_normal, rng_uniform, Rng};
pub use sparse::{spmm, SparseAdj};
