use serde::{Deserialize, Serialize};

use super::Activation;
use crate::error::{Error, Result};
use crate::numcore::{Matrix, SparseAdj};
use crate::scalar::Scalar;

/// Self-loop weight of the improved GCN: `Â = A + 2I`.
pub const SELF_LOOP_WEIGHT: f64 = 2.0;

/// How `Â` is normalised into the propagation operator `P`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalisation {
    /// `D̂^{-1/2} Â D̂^{-1/2}`
    #[default]
    Symmetric,
    /// `D̂^{-1} Â`
    Row,
}

/// Builds the propagation operator `P` from a self-loop-free adjacency.
pub fn propagation<S: Scalar>(adj: &SparseAdj<S>, norm: Normalisation) -> SparseAdj<S> {
    let self_w = S::of(SELF_LOOP_WEIGHT);
    let degree: Vec<S> = adj.row_sums().into_iter().map(|d| d + self_w).collect();
    let rows = (0..adj.n())
        .map(|i| {
            let mut row: Vec<(usize, S)> = Vec::with_capacity(adj.degree(i) + 1);
            let mut pushed_self = false;
            for &(j, w) in adj.neighbors(i) {
                if !pushed_self && j > i {
                    row.push((i, self_w));
                    pushed_self = true;
                }
                // Raw self loops are not expected here; fold them into Â_ii.
                if j == i {
                    row.push((i, self_w + w));
                    pushed_self = true;
                    continue;
                }
                row.push((j, w));
            }
            if !pushed_self {
                row.push((i, self_w));
            }
            for (j, w) in &mut row {
                *w = match norm {
                    Normalisation::Symmetric => *w / (degree[i] * degree[*j]).sqrt(),
                    Normalisation::Row => *w / degree[i],
                };
            }
            row
        })
        .collect();
    SparseAdj::from_sorted_rows(rows, norm == Normalisation::Symmetric && adj.is_symmetric())
}

#[derive(Debug, Clone)]
struct GcnCache<S> {
    prop: SparseAdj<S>,
    px: Matrix<S>,
    pre: Matrix<S>,
    out: Matrix<S>,
}

/// Improved GCN: `H = act((1/scale) · P X W + b)`.
#[derive(Debug, Clone)]
pub struct GcnLayer<S> {
    pub weight: Matrix<S>,
    pub bias: Matrix<S>,
    pub scale: S,
    pub activation: Activation,
    pub normalisation: Normalisation,
    cache: Option<GcnCache<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnGrads<S> {
    pub input: Matrix<S>,
    pub weight: Matrix<S>,
    pub bias: Matrix<S>,
}

impl<S: Scalar> GcnLayer<S> {
    /// Zero-initialised layer; see [`crate::init`] for random schemes.
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self::from_parts(
            Matrix::zeros(in_dim, out_dim),
            Matrix::zeros(1, out_dim),
            activation,
        )
    }

    pub fn from_parts(weight: Matrix<S>, bias: Matrix<S>, activation: Activation) -> Self {
        assert_eq!(bias.shape(), (1, weight.cols()), "bias must be 1 x out_dim");
        Self {
            weight,
            bias,
            scale: S::one(),
            activation,
            normalisation: Normalisation::Symmetric,
            cache: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&mut self, adj: &SparseAdj<S>, x: &Matrix<S>) -> Result<Matrix<S>> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape("gcn_forward", x.shape(), self.weight.shape()));
        }
        if adj.n() != x.rows() {
            return Err(Error::shape("gcn_forward", (adj.n(), adj.n()), x.shape()));
        }
        let prop = propagation(adj, self.normalisation);
        let px = prop.spmm(x)?;
        let mut pre = px.matmul(&self.weight)?;
        if self.scale != S::one() {
            pre.scale_in_place(self.scale.recip());
        }
        pre.add_row_broadcast(&self.bias)?;
        let out = self.activation.apply(&pre);
        self.cache = Some(GcnCache {
            prop,
            px,
            pre,
            out: out.clone(),
        });
        Ok(out)
    }

    pub fn backward(&self, grad_out: &Matrix<S>) -> Result<GcnGrads<S>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("gcn backward called before forward".into()))?;
        if grad_out.shape() != cache.pre.shape() {
            return Err(Error::shape(
                "gcn_backward",
                grad_out.shape(),
                cache.pre.shape(),
            ));
        }
        let grad_pre = self.activation.backprop(&cache.pre, grad_out);
        let inv = self.scale.recip();
        let mut weight = cache.px.matmul_tn(&grad_pre)?;
        weight.scale_in_place(inv);
        let bias = grad_pre.col_sums();
        let mut input = cache
            .prop
            .transpose()
            .spmm(&grad_pre.matmul_nt(&self.weight)?)?;
        input.scale_in_place(inv);
        Ok(GcnGrads {
            input,
            weight,
            bias,
        })
    }

    pub fn pre_activation(&self) -> Option<&Matrix<S>> {
        self.cache.as_ref().map(|c| &c.pre)
    }

    pub fn output(&self) -> Option<&Matrix<S>> {
        self.cache.as_ref().map(|c| &c.out)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub fn gcn_forward<S: Scalar>(
    layer: &mut GcnLayer<S>,
    adj: &SparseAdj<S>,
    x: &Matrix<S>,
) -> Result<Matrix<S>> {
    layer.forward(adj, x)
}

pub fn gcn_backward<S: Scalar>(layer: &GcnLayer<S>, grad_out: &Matrix<S>) -> Result<GcnGrads<S>> {
    layer.backward(grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{assert_grad_close, numeric_grad, random_graph, random_matrix};
    use crate::numcore::Rng;

    fn identity_layer(n: usize) -> GcnLayer<f64> {
        GcnLayer::from_parts(Matrix::identity(n), Matrix::zeros(1, n), Activation::None)
    }

    #[test]
    fn isolated_node_propagates_itself() {
        let adj = SparseAdj::<f64>::empty(1);
        let p = propagation(&adj, Normalisation::Symmetric).to_dense();
        assert_eq!(p.data(), &[1.0]);
        let mut layer = GcnLayer::from_parts(
            Matrix::from_rows(&[[2.0, -1.0]]).unwrap(),
            Matrix::from_rows(&[[0.5, 0.0]]).unwrap(),
            Activation::Relu,
        );
        let x = Matrix::from_rows(&[[3.0]]).unwrap();
        let h = layer.forward(&adj, &x).unwrap();
        // relu(3*[2,-1] + [0.5, 0]) = [6.5, 0]
        assert_eq!(h.data(), &[6.5, 0.0]);
    }

    #[test]
    fn two_node_propagation_matches_hand_computation() {
        let adj = SparseAdj::<f64>::undirected(2, [(0, 1)]).unwrap();
        // Â = [[2,1],[1,2]], D̂ = diag(3,3), P = Â/3.
        let p = propagation(&adj, Normalisation::Symmetric).to_dense();
        let expected = [2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
        for (a, b) in p.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        // Row normalisation coincides on a regular graph.
        let r = propagation(&adj, Normalisation::Row).to_dense();
        for (a, b) in r.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn row_normalisation_differs_on_irregular_graph() {
        let adj = SparseAdj::<f64>::undirected(3, [(0, 1), (1, 2)]).unwrap();
        let row = propagation(&adj, Normalisation::Row).to_dense();
        for i in 0..3 {
            let s: f64 = row.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        let sym = propagation(&adj, Normalisation::Symmetric).to_dense();
        assert_eq!(sym, sym.transpose());
        assert_ne!(row, sym);
    }

    #[test]
    fn identity_weights_on_edgeless_graph_is_identity() {
        let adj = SparseAdj::<f64>::empty(3);
        let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 4.0], [3.0, 0.0]]).unwrap();
        assert_eq!(identity_layer(2).forward(&adj, &x).unwrap(), x);
    }

    #[test]
    fn feature_dim_mismatch_is_shape_error() {
        let adj = SparseAdj::<f64>::empty(2);
        let x = Matrix::zeros(2, 3);
        assert!(matches!(
            identity_layer(2).forward(&adj, &x),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        assert!(matches!(
            identity_layer(2).backward(&Matrix::zeros(1, 2)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(4);
        let adj = random_graph(&mut rng, 5);
        let x = random_matrix(&mut rng, 5, 3);
        let mut layer = GcnLayer::from_parts(
            random_matrix(&mut rng, 3, 4),
            random_matrix(&mut rng, 1, 4),
            Activation::Relu,
        );
        layer.forward(&adj, &x).unwrap();
        let g = layer.backward(&Matrix::zeros(5, 4)).unwrap();
        assert!(g
            .input
            .data()
            .iter()
            .chain(g.weight.data())
            .chain(g.bias.data())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn single_node_weight_gradient_is_outer_product() {
        let adj = SparseAdj::<f64>::empty(1);
        let x = Matrix::from_rows(&[[0.3, -1.2]]).unwrap();
        let mut layer = GcnLayer::from_parts(
            Matrix::from_rows(&[[1.0, 2.0, 0.0], [0.5, -1.0, 1.0]]).unwrap(),
            Matrix::zeros(1, 3),
            Activation::None,
        );
        layer.forward(&adj, &x).unwrap();
        let go = Matrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap();
        let g = layer.backward(&go).unwrap();
        assert_eq!(g.weight, x.matmul_tn(&go).unwrap());
        // Finite-difference oracle for the same quantity.
        let numeric = numeric_grad(&layer.weight, |w| {
            let mut l = GcnLayer::from_parts(w.clone(), Matrix::zeros(1, 3), Activation::None);
            let out = l.forward(&adj, &x).unwrap();
            out.data().iter().zip(go.data()).map(|(a, b)| a * b).sum()
        });
        assert_grad_close(&g.weight, &numeric);
    }

    #[test]
    fn random_graph_gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = Rng::new(100 + seed);
            let adj = random_graph(&mut rng, 5);
            let x = random_matrix(&mut rng, 5, 3);
            let w = random_matrix(&mut rng, 3, 4);
            let b = random_matrix(&mut rng, 1, 4);
            let proj = random_matrix(&mut rng, 5, 4);
            for act in [Activation::None, Activation::Relu] {
                let loss = |x: &Matrix<f64>, w: &Matrix<f64>, b: &Matrix<f64>| -> f64 {
                    let mut l = GcnLayer::from_parts(w.clone(), b.clone(), act);
                    l.scale = 1.7;
                    let out = l.forward(&adj, x).unwrap();
                    out.data().iter().zip(proj.data()).map(|(a, c)| a * c).sum()
                };
                let mut layer = GcnLayer::from_parts(w.clone(), b.clone(), act);
                layer.scale = 1.7;
                layer.forward(&adj, &x).unwrap();
                let g = layer.backward(&proj).unwrap();
                assert_grad_close(&g.input, &numeric_grad(&x, |x| loss(x, &w, &b)));
                assert_grad_close(&g.weight, &numeric_grad(&w, |w| loss(&x, w, &b)));
                assert_grad_close(&g.bias, &numeric_grad(&b, |b| loss(&x, &w, b)));
            }
        }
    }

    #[test]
    fn row_normalised_gradients_match_finite_differences() {
        let mut rng = Rng::new(77);
        let adj = random_graph(&mut rng, 6);
        let x = random_matrix(&mut rng, 6, 2);
        let w = random_matrix(&mut rng, 2, 3);
        let proj = random_matrix(&mut rng, 6, 3);
        let make = |w: &Matrix<f64>| {
            let mut l = GcnLayer::from_parts(w.clone(), Matrix::zeros(1, 3), Activation::None);
            l.normalisation = Normalisation::Row;
            l
        };
        let loss = |x: &Matrix<f64>| -> f64 {
            let out = make(&w).forward(&adj, x).unwrap();
            out.data().iter().zip(proj.data()).map(|(a, c)| a * c).sum()
        };
        let mut layer = make(&w);
        layer.forward(&adj, &x).unwrap();
        let g = layer.backward(&proj).unwrap();
        assert_grad_close(&g.input, &numeric_grad(&x, loss));
    }

    #[test]
    fn doubling_scale_halves_output() {
        let mut rng = Rng::new(5);
        let adj = random_graph(&mut rng, 6);
        let x = random_matrix(&mut rng, 6, 3);
        let mut layer = GcnLayer::from_parts(
            random_matrix(&mut rng, 3, 2),
            Matrix::zeros(1, 2),
            Activation::None,
        );
        let base = layer.forward(&adj, &x).unwrap();
        layer.scale = 2.0;
        let halved = layer.forward(&adj, &x).unwrap();
        for (a, b) in base.data().iter().zip(halved.data()) {
            assert_eq!(a / 2.0, *b);
        }
    }
}
