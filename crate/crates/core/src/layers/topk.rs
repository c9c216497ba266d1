use crate::error::{Error, Result};
use crate::numcore::{Matrix, SparseAdj};
use crate::scalar::Scalar;

/// Default fraction of nodes kept by a pool.
pub const DEFAULT_RATIO: f64 = 0.8;

/// `max(1, ⌈ratio · n⌉)`. Products within 1e-9 of an integer are treated
/// as that integer so that e.g. `0.7 · 10` keeps 7 nodes, not 8.
pub fn keep_count(ratio: f64, n: usize) -> usize {
    let raw = ratio * n as f64;
    let nearest = raw.round();
    let k = if (raw - nearest).abs() < 1e-9 {
        nearest
    } else {
        raw.ceil()
    };
    (k as usize).clamp(1, n.max(1))
}

/// Indices of the `count` highest scores, ties broken by lower index,
/// returned in ascending index order.
pub fn select_top<S: Scalar>(scores: &[S], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(count);
    order.sort_unstable();
    order
}

#[derive(Debug, Clone)]
struct TopKCache<S> {
    input: Matrix<S>,
    scores: Vec<S>,
    norm: S,
    guarded: bool,
    kept: Vec<usize>,
    out: Matrix<S>,
}

/// Top-k pooling: `ŷ = Xp/‖p‖`, keep the best `⌈kN⌉` nodes and gate them
/// by `tanh(ŷ)`, then divide by `scale`.
#[derive(Debug, Clone)]
pub struct TopKPool<S> {
    /// Projection vector, `F x 1`.
    pub p: Matrix<S>,
    pub ratio: f64,
    pub scale: S,
    cache: Option<TopKCache<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopKGrads<S> {
    pub input: Matrix<S>,
    pub p: Matrix<S>,
}

pub struct Pooled<S> {
    pub adj: SparseAdj<S>,
    pub features: Matrix<S>,
    pub kept: Vec<usize>,
}

impl<S: Scalar> TopKPool<S> {
    pub fn new(p: Matrix<S>, ratio: f64) -> Result<Self> {
        if p.cols() != 1 || p.rows() == 0 {
            return Err(Error::Domain(format!(
                "projection must be F x 1, got {:?}",
                p.shape()
            )));
        }
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Domain(format!("pool ratio {ratio} outside [0, 1)")));
        }
        Ok(Self {
            p,
            ratio,
            scale: S::one(),
            cache: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    fn projection_norm(&self) -> (S, bool) {
        let norm = self.p.frobenius_norm();
        if norm > S::norm_guard() {
            (norm, false)
        } else {
            (S::norm_guard(), true)
        }
    }

    /// Normalised scores `ŷ` for every row of `x`.
    pub fn scores(&self, x: &Matrix<S>) -> Result<Vec<S>> {
        if x.cols() != self.dim() {
            return Err(Error::shape("topk_scores", x.shape(), self.p.shape()));
        }
        let (norm, _) = self.projection_norm();
        Ok(x.matmul(&self.p)?
            .data()
            .iter()
            .map(|&v| v / norm)
            .collect())
    }

    pub fn forward(&mut self, adj: &SparseAdj<S>, x: &Matrix<S>) -> Result<Pooled<S>> {
        if adj.n() != x.rows() {
            return Err(Error::shape("topk_forward", (adj.n(), adj.n()), x.shape()));
        }
        let scores = self.scores(x)?;
        let (norm, guarded) = self.projection_norm();
        let kept = select_top(&scores, keep_count(self.ratio, x.rows()));
        let inv = self.scale.recip();
        let mut features = x.select_rows(&kept);
        for (r, &i) in kept.iter().enumerate() {
            let gate = scores[i].tanh() * inv;
            features.row_mut(r).iter_mut().for_each(|v| *v *= gate);
        }
        let pooled_adj = adj.induced(&kept);
        self.cache = Some(TopKCache {
            input: x.clone(),
            scores,
            norm,
            guarded,
            kept: kept.clone(),
            out: features.clone(),
        });
        Ok(Pooled {
            adj: pooled_adj,
            features,
            kept,
        })
    }

    /// Selection indices are treated as constants; dropped rows get zero
    /// gradient.
    pub fn backward(&self, grad_out: &Matrix<S>) -> Result<TopKGrads<S>> {
        let c = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("topk backward called before forward".into()))?;
        if grad_out.shape() != c.out.shape() {
            return Err(Error::shape(
                "topk_backward",
                grad_out.shape(),
                c.out.shape(),
            ));
        }
        let inv = self.scale.recip();
        let f = self.dim();
        let mut input = Matrix::zeros(c.input.rows(), f);
        let mut grad_p = Matrix::zeros(f, 1);
        let p_hat: Vec<S> = self.p.data().iter().map(|&v| v / c.norm).collect();
        for (r, &i) in c.kept.iter().enumerate() {
            let x_i = c.input.row(i);
            let g = grad_out.row(r);
            let t = c.scores[i].tanh();
            // d out / d gate, then through tanh to the score.
            let d_gate: S = x_i.iter().zip(g).map(|(&a, &b)| a * b).sum::<S>() * inv;
            let d_score = d_gate * (S::one() - t * t);
            let row = input.row_mut(i);
            for k in 0..f {
                row[k] = g[k] * t * inv + d_score * p_hat[k];
            }
            // ŷ = x·p/‖p‖ ⇒ ∂ŷ/∂p = (x − ŷ p̂)/‖p‖, unless the norm is clamped.
            for k in 0..f {
                let dp = if c.guarded {
                    x_i[k] / c.norm
                } else {
                    (x_i[k] - c.scores[i] * p_hat[k]) / c.norm
                };
                grad_p[(k, 0)] += d_score * dp;
            }
        }
        Ok(TopKGrads { input, p: grad_p })
    }

    pub fn output(&self) -> Option<&Matrix<S>> {
        self.cache.as_ref().map(|c| &c.out)
    }

    pub fn kept(&self) -> Option<&[usize]> {
        self.cache.as_ref().map(|c| c.kept.as_slice())
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub fn topk_forward<S: Scalar>(
    pool: &mut TopKPool<S>,
    adj: &SparseAdj<S>,
    x: &Matrix<S>,
) -> Result<Pooled<S>> {
    pool.forward(adj, x)
}

pub fn topk_backward<S: Scalar>(pool: &TopKPool<S>, grad_out: &Matrix<S>) -> Result<TopKGrads<S>> {
    pool.backward(grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::{assert_grad_close, numeric_grad, random_graph, random_matrix};
    use crate::numcore::Rng;

    #[test]
    fn keep_count_examples() {
        assert_eq!(keep_count(0.8, 10), 8);
        assert_eq!(keep_count(0.8, 1), 1);
        assert_eq!(keep_count(0.5, 3), 2);
        assert_eq!(keep_count(0.7, 10), 7);
        assert_eq!(keep_count(0.0, 5), 1);
        assert_eq!(keep_count(0.8, 39), 32);
    }

    #[test]
    fn ten_nodes_drop_two() {
        let mut rng = Rng::new(1);
        let adj = random_graph(&mut rng, 10);
        let x = random_matrix(&mut rng, 10, 3);
        let mut pool = TopKPool::new(random_matrix(&mut rng, 3, 1), 0.8).unwrap();
        let out = pool.forward(&adj, &x).unwrap();
        assert_eq!(out.kept.len(), 8);
        assert_eq!(out.features.rows(), 8);
        assert_eq!(out.adj.n(), 8);
    }

    #[test]
    fn single_node_is_always_kept() {
        let adj = SparseAdj::<f64>::empty(1);
        let x = Matrix::from_rows(&[[-5.0]]).unwrap();
        let mut pool = TopKPool::new(Matrix::from_rows(&[[1.0]]).unwrap(), 0.1).unwrap();
        assert_eq!(pool.forward(&adj, &x).unwrap().kept, vec![0]);
    }

    #[test]
    fn hand_worked_selection() {
        let adj = SparseAdj::<f64>::undirected(3, [(0, 1), (1, 2)]).unwrap();
        let x = Matrix::from_rows(&[[1.0], [3.0], [2.0]]).unwrap();
        let mut pool = TopKPool::new(Matrix::from_rows(&[[1.0]]).unwrap(), 0.5).unwrap();
        let out = pool.forward(&adj, &x).unwrap();
        assert_eq!(out.kept, vec![1, 2]);
        assert_eq!(out.features.data(), &[3.0 * 3f64.tanh(), 2.0 * 2f64.tanh()]);
        assert_eq!(out.adj.edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(select_top(&[1.0, 2.0, 2.0, 2.0], 2), vec![1, 2]);
    }

    #[test]
    fn zero_projection_does_not_produce_nan() {
        let adj = SparseAdj::<f64>::empty(3);
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let mut pool = TopKPool::new(Matrix::zeros(2, 1), 0.5).unwrap();
        let out = pool.forward(&adj, &x).unwrap();
        assert!(out.features.is_finite());
        let g = pool.backward(&Matrix::filled(2, 2, 1.0)).unwrap();
        assert!(g.input.is_finite() && g.p.is_finite());
    }

    #[test]
    fn rejects_ratio_outside_range() {
        assert!(TopKPool::<f64>::new(Matrix::zeros(2, 1), 1.0).is_err());
        assert!(TopKPool::<f64>::new(Matrix::zeros(2, 1), -0.1).is_err());
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let pool = TopKPool::<f64>::new(Matrix::zeros(2, 1), 0.5).unwrap();
        assert!(matches!(
            pool.backward(&Matrix::zeros(1, 2)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(2);
        let adj = random_graph(&mut rng, 6);
        let x = random_matrix(&mut rng, 6, 3);
        let mut pool = TopKPool::new(random_matrix(&mut rng, 3, 1), 0.5).unwrap();
        let out = pool.forward(&adj, &x).unwrap();
        let g = pool
            .backward(&Matrix::zeros(out.features.rows(), 3))
            .unwrap();
        assert!(g.input.data().iter().chain(g.p.data()).all(|&v| v == 0.0));
    }

    fn check_fd(n: usize, ratio: f64, seed: u64) {
        let mut rng = Rng::new(seed);
        let adj = random_graph(&mut rng, n);
        let x = random_matrix(&mut rng, n, 3);
        let p = random_matrix(&mut rng, 3, 1);
        let mut pool = TopKPool::new(p.clone(), ratio).unwrap();
        pool.scale = 1.3;
        let out = pool.forward(&adj, &x).unwrap();
        let kept = out.kept.clone();
        let proj = random_matrix(&mut rng, kept.len(), 3);
        let loss = |x: &Matrix<f64>, p: &Matrix<f64>| -> f64 {
            let mut pl = TopKPool::new(p.clone(), ratio).unwrap();
            pl.scale = 1.3;
            let o = pl.forward(&adj, x).unwrap();
            assert_eq!(o.kept, kept, "selection changed under perturbation");
            o.features
                .data()
                .iter()
                .zip(proj.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let g = pool.backward(&proj).unwrap();
        assert_grad_close(&g.input, &numeric_grad(&x, |x| loss(x, &p)));
        assert_grad_close(&g.p, &numeric_grad(&p, |p| loss(&x, p)));
        for i in (0..n).filter(|i| !kept.contains(i)) {
            assert!(g.input.row(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn all_kept_gradients_match_finite_differences() {
        // ⌈0.9 · 4⌉ = 4
        for seed in 0..5 {
            check_fd(4, 0.9, seed);
        }
    }

    #[test]
    fn drop_case_gradients_match_finite_differences() {
        for seed in 10..15 {
            check_fd(6, 0.5, seed);
        }
    }
}
