use super::Activation;
use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
struct DenseCache<S> {
    input: Matrix<S>,
    pre: Matrix<S>,
}

/// Affine layer `act(X W + b)`.
#[derive(Debug, Clone)]
pub struct DenseLayer<S> {
    pub weight: Matrix<S>,
    pub bias: Matrix<S>,
    pub activation: Activation,
    cache: Option<DenseCache<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<S> {
    pub input: Matrix<S>,
    pub weight: Matrix<S>,
    pub bias: Matrix<S>,
}

impl<S: Scalar> DenseLayer<S> {
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
            activation,
            cache: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&mut self, x: &Matrix<S>) -> Result<Matrix<S>> {
        let mut pre = x.matmul(&self.weight)?;
        pre.add_row_broadcast(&self.bias)?;
        let out = self.activation.apply(&pre);
        self.cache = Some(DenseCache {
            input: x.clone(),
            pre,
        });
        Ok(out)
    }

    pub fn backward(&self, grad_out: &Matrix<S>) -> Result<DenseGrads<S>> {
        let c = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("dense backward called before forward".into()))?;
        if grad_out.shape() != c.pre.shape() {
            return Err(Error::shape(
                "dense_backward",
                grad_out.shape(),
                c.pre.shape(),
            ));
        }
        let grad_pre = self.activation.backprop(&c.pre, grad_out);
        Ok(DenseGrads {
            input: grad_pre.matmul_nt(&self.weight)?,
            weight: c.input.matmul_tn(&grad_pre)?,
            bias: grad_pre.col_sums(),
        })
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub fn dense_forward<S: Scalar>(layer: &mut DenseLayer<S>, x: &Matrix<S>) -> Result<Matrix<S>> {
    layer.forward(x)
}

pub fn dense_backward<S: Scalar>(
    layer: &DenseLayer<S>,
    grad_out: &Matrix<S>,
) -> Result<DenseGrads<S>> {
    layer.backward(grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{assert_grad_close, numeric_grad, random_matrix};
    use crate::numcore::Rng;

    #[test]
    fn identity_layer() {
        let mut l =
            DenseLayer::from_parts(Matrix::identity(3), Matrix::zeros(1, 3), Activation::None);
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(l.forward(&x).unwrap(), x);
    }

    #[test]
    fn dead_relu_unit_passes_nothing() {
        let mut l = DenseLayer::from_parts(
            Matrix::from_rows(&[[1.0]]).unwrap(),
            Matrix::from_rows(&[[-5.0]]).unwrap(),
            Activation::Relu,
        );
        let x = Matrix::from_rows(&[[2.0]]).unwrap();
        assert_eq!(l.forward(&x).unwrap().data(), &[0.0]);
        let g = l.backward(&Matrix::from_rows(&[[3.0]]).unwrap()).unwrap();
        assert_eq!(g.input.data(), &[0.0]);
        assert_eq!(g.weight.data(), &[0.0]);
        assert_eq!(g.bias.data(), &[0.0]);
    }

    #[test]
    fn random_layer_gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let x = random_matrix(&mut rng, 2, 4);
            let w = random_matrix(&mut rng, 4, 3);
            let b = random_matrix(&mut rng, 1, 3);
            let proj = random_matrix(&mut rng, 2, 3);
            for act in [Activation::None, Activation::Relu] {
                let loss = |x: &Matrix<f64>, w: &Matrix<f64>, b: &Matrix<f64>| -> f64 {
                    let out = DenseLayer::from_parts(w.clone(), b.clone(), act)
                        .forward(x)
                        .unwrap();
                    out.data().iter().zip(proj.data()).map(|(a, c)| a * c).sum()
                };
                let mut l = DenseLayer::from_parts(w.clone(), b.clone(), act);
                l.forward(&x).unwrap();
                let g = l.backward(&proj).unwrap();
                assert_grad_close(&g.input, &numeric_grad(&x, |x| loss(x, &w, &b)));
                assert_grad_close(&g.weight, &numeric_grad(&w, |w| loss(&x, w, &b)));
                assert_grad_close(&g.bias, &numeric_grad(&b, |b| loss(&x, &w, b)));
            }
        }
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let l = DenseLayer::<f64>::new(2, 2, Activation::Relu);
        assert!(matches!(
            l.backward(&Matrix::zeros(1, 2)),
            Err(Error::State(_))
        ));
    }
}
