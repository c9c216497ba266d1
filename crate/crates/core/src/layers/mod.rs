//! Differentiable blocks with hand-derived backward passes.
//!
//! Each layer caches what its backward pass needs during `forward`; calling
//! `backward` first is a state error. Inputs are one graph at a time:
//! a sparse adjacency plus an `N x F` feature matrix.

mod dense;
mod gcn;
mod readout;
mod topk;

pub use dense::{dense_backward, dense_forward, DenseGrads, DenseLayer};
pub use gcn::{
    gcn_backward, gcn_forward, propagation, GcnGrads, GcnLayer, Normalisation, SELF_LOOP_WEIGHT,
};
pub use readout::{readout, Readout, ReadoutKind};
pub use topk::{
    keep_count, select_top, topk_backward, topk_forward, Pooled, TopKGrads, TopKPool, DEFAULT_RATIO,
};

use serde::{Deserialize, Serialize};

use crate::numcore::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    pub fn apply<S: Scalar>(self, pre: &Matrix<S>) -> Matrix<S> {
        match self {
            Activation::Relu => pre.map(|v| v.max(S::zero())),
            Activation::None => pre.clone(),
        }
    }

    /// Gradient w.r.t. the pre-activation. The ReLU derivative at 0 is 0.
    pub fn backprop<S: Scalar>(self, pre: &Matrix<S>, grad_out: &Matrix<S>) -> Matrix<S> {
        match self {
            Activation::Relu => {
                let mut g = grad_out.clone();
                for (v, &z) in g.data_mut().iter_mut().zip(pre.data()) {
                    if z <= S::zero() {
                        *v = S::zero();
                    }
                }
                g
            }
            Activation::None => grad_out.clone(),
        }
    }
}
