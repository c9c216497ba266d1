use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    Mean,
    Sum,
    Max,
    /// `[max ; sum]`, width `2F`.
    MaxAndSum,
}

impl ReadoutKind {
    pub fn width(self, features: usize) -> usize {
        match self {
            ReadoutKind::MaxAndSum => 2 * features,
            _ => features,
        }
    }
}

#[derive(Debug, Clone)]
struct ReadoutCache {
    rows: usize,
    cols: usize,
    argmax: Vec<usize>,
}

/// Global pooling of node features into a `1 x width` row.
#[derive(Debug, Clone)]
pub struct Readout {
    pub kind: ReadoutKind,
    cache: Option<ReadoutCache>,
}

fn column_max<S: Scalar>(x: &Matrix<S>) -> (Matrix<S>, Vec<usize>) {
    let mut best = x.row(0).to_vec();
    let mut arg = vec![0; x.cols()];
    for i in 1..x.rows() {
        for (j, &v) in x.row(i).iter().enumerate() {
            // Strict comparison keeps the lowest index on ties.
            if v > best[j] {
                best[j] = v;
                arg[j] = i;
            }
        }
    }
    (Matrix::row_vector(best), arg)
}

impl Readout {
    pub fn new(kind: ReadoutKind) -> Self {
        Self { kind, cache: None }
    }

    pub fn forward<S: Scalar>(&mut self, x: &Matrix<S>) -> Result<Matrix<S>> {
        if x.rows() == 0 {
            return Err(Error::Domain("readout of a graph with no nodes".into()));
        }
        let n = S::of(x.rows() as f64);
        let mut argmax = Vec::new();
        let out = match self.kind {
            ReadoutKind::Sum => x.col_sums(),
            ReadoutKind::Mean => x.col_sums().map(|v| v / n),
            ReadoutKind::Max => {
                let (m, a) = column_max(x);
                argmax = a;
                m
            }
            ReadoutKind::MaxAndSum => {
                let (m, a) = column_max(x);
                argmax = a;
                Matrix::hcat(&[&m, &x.col_sums()])?
            }
        };
        self.cache = Some(ReadoutCache {
            rows: x.rows(),
            cols: x.cols(),
            argmax,
        });
        Ok(out)
    }

    pub fn backward<S: Scalar>(&self, grad_out: &Matrix<S>) -> Result<Matrix<S>> {
        let c = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("readout backward called before forward".into()))?;
        let width = self.kind.width(c.cols);
        if grad_out.shape() != (1, width) {
            return Err(Error::shape(
                "readout_backward",
                grad_out.shape(),
                (1, width),
            ));
        }
        let g = grad_out.data();
        let mut out = Matrix::zeros(c.rows, c.cols);
        let spread = |out: &mut Matrix<S>, g: &[S], factor: S| {
            for i in 0..c.rows {
                for (o, &v) in out.row_mut(i).iter_mut().zip(g) {
                    *o += v * factor;
                }
            }
        };
        match self.kind {
            ReadoutKind::Sum => spread(&mut out, g, S::one()),
            ReadoutKind::Mean => spread(&mut out, g, S::of(c.rows as f64).recip()),
            ReadoutKind::Max => {
                for (j, &i) in c.argmax.iter().enumerate() {
                    out[(i, j)] += g[j];
                }
            }
            ReadoutKind::MaxAndSum => {
                for (j, &i) in c.argmax.iter().enumerate() {
                    out[(i, j)] += g[j];
                }
                spread(&mut out, &g[c.cols..], S::one());
            }
        }
        Ok(out)
    }
}

pub fn readout<S: Scalar>(kind: ReadoutKind, x: &Matrix<S>) -> Result<Matrix<S>> {
    Readout::new(kind).forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{assert_grad_close, numeric_grad, random_matrix};
    use crate::numcore::Rng;

    const KINDS: [ReadoutKind; 4] = [
        ReadoutKind::Mean,
        ReadoutKind::Sum,
        ReadoutKind::Max,
        ReadoutKind::MaxAndSum,
    ];

    #[test]
    fn single_row_is_returned_by_every_basic_kind() {
        let x = Matrix::from_rows(&[[1.5, -2.0]]).unwrap();
        for kind in [ReadoutKind::Mean, ReadoutKind::Sum, ReadoutKind::Max] {
            assert_eq!(readout(kind, &x).unwrap(), x);
        }
    }

    #[test]
    fn max_and_sum_example() {
        let x = Matrix::from_rows(&[[1.0, 4.0], [3.0, 2.0]]).unwrap();
        assert_eq!(
            readout(ReadoutKind::MaxAndSum, &x).unwrap().data(),
            &[3.0, 4.0, 4.0, 6.0]
        );
    }

    #[test]
    fn mean_backward_spreads_evenly() {
        let x = Matrix::<f64>::zeros(4, 2);
        let mut r = Readout::new(ReadoutKind::Mean);
        r.forward(&x).unwrap();
        let g = r
            .backward(&Matrix::from_rows(&[[2.0, -1.0]]).unwrap())
            .unwrap();
        for i in 0..4 {
            assert_eq!(g.row(i), &[0.5, -0.25]);
        }
    }

    #[test]
    fn max_ties_route_to_lowest_row() {
        let x = Matrix::from_rows(&[[1.0], [3.0], [3.0]]).unwrap();
        let mut r = Readout::new(ReadoutKind::Max);
        r.forward(&x).unwrap();
        let g = r.backward(&Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_input_is_domain_error() {
        assert!(matches!(
            readout(ReadoutKind::Mean, &Matrix::<f64>::zeros(0, 2)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let x = random_matrix(&mut rng, 5, 3);
            for kind in KINDS {
                let proj = random_matrix(&mut rng, 1, kind.width(3));
                let loss = |x: &Matrix<f64>| -> f64 {
                    readout(kind, x)
                        .unwrap()
                        .data()
                        .iter()
                        .zip(proj.data())
                        .map(|(a, b)| a * b)
                        .sum()
                };
                let mut r = Readout::new(kind);
                r.forward(&x).unwrap();
                assert_grad_close(&r.backward(&proj).unwrap(), &numeric_grad(&x, loss));
            }
        }
    }
}
