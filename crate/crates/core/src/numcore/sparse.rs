use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::scalar::Scalar;

/// Weighted sparse adjacency stored as per-node neighbour lists sorted by
/// column index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdj<S> {
    n: usize,
    rows: Vec<Vec<(usize, S)>>,
    symmetric: bool,
}

impl<S: Scalar> SparseAdj<S> {
    /// Graph on `n` nodes with no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
            symmetric: true,
        }
    }

    /// Builds from explicit `(row, col, weight)` entries. Duplicate entries
    /// and out-of-range indices are rejected. With `symmetric` set, every
    /// entry must have its mirror with an equal weight.
    pub fn from_entries(n: usize, entries: &[(usize, usize, S)], symmetric: bool) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, S)>> = vec![Vec::new(); n];
        for &(i, j, w) in entries {
            if i >= n || j >= n {
                return Err(Error::Domain(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if !w.is_finite() {
                return Err(Error::Domain(format!(
                    "edge ({i}, {j}) has non-finite weight"
                )));
            }
            rows[i].push((j, w));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            if let Some(w) = row.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::Domain(format!("duplicate entry ({i}, {})", w[0].0)));
            }
        }
        let adj = Self { n, rows, symmetric };
        if symmetric && !adj.is_structurally_symmetric() {
            return Err(Error::Domain("entries are not symmetric".into()));
        }
        Ok(adj)
    }

    /// Undirected unit-weight graph from node pairs. Both orientations of a
    /// pair collapse into one edge; self pairs are skipped.
    pub fn undirected(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, S)>> = vec![Vec::new(); n];
        for (i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::Domain(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                continue;
            }
            rows[i].push((j, S::one()));
            rows[j].push((i, S::one()));
        }
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
            row.dedup_by_key(|&mut (j, _)| j);
        }
        Ok(Self {
            n,
            rows,
            symmetric: true,
        })
    }

    /// Rows must already be sorted by column and free of duplicates.
    pub(crate) fn from_sorted_rows(rows: Vec<Vec<(usize, S)>>, symmetric: bool) -> Self {
        Self {
            n: rows.len(),
            rows,
            symmetric,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, S)] {
        &self.rows[i]
    }

    /// Number of stored entries (each undirected edge counts twice).
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<S> {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .ok()
            .map(|k| self.rows[i][k].1)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    /// Weighted row sums.
    pub fn row_sums(&self) -> Vec<S> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(_, w)| w).sum())
            .collect()
    }

    pub fn has_self_loops(&self) -> bool {
        self.rows
            .iter()
            .enumerate()
            .any(|(i, r)| r.iter().any(|&(j, _)| j == i))
    }

    fn is_structurally_symmetric(&self) -> bool {
        self.rows
            .iter()
            .enumerate()
            .all(|(i, r)| r.iter().all(|&(j, w)| self.weight(j, i) == Some(w)))
    }

    /// `self * x`.
    pub fn spmm(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        if self.n != x.rows() {
            return Err(Error::shape("spmm", (self.n, self.n), x.shape()));
        }
        let mut out = Matrix::zeros(self.n, x.cols());
        for (i, row) in self.rows.iter().enumerate() {
            let out_row = out.row_mut(i);
            for &(j, w) in row {
                for (o, &v) in out_row.iter_mut().zip(x.row(j)) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        if self.symmetric {
            return self.clone();
        }
        let mut rows: Vec<Vec<(usize, S)>> = vec![Vec::new(); self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                rows[j].push((i, w));
            }
        }
        // Rows are visited in increasing `i`, so each new row is already sorted.
        Self {
            n: self.n,
            rows,
            symmetric: false,
        }
    }

    pub fn to_dense(&self) -> Matrix<S> {
        let mut m = Matrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// Subgraph induced by `kept` (ascending original indices). Node `r` of
    /// the result is original node `kept[r]`.
    pub fn induced(&self, kept: &[usize]) -> Self {
        let mut new_index = vec![usize::MAX; self.n];
        for (r, &i) in kept.iter().enumerate() {
            new_index[i] = r;
        }
        let rows = kept
            .iter()
            .map(|&i| {
                let mut row: Vec<(usize, S)> = self.rows[i]
                    .iter()
                    .filter(|&&(j, _)| new_index[j] != usize::MAX)
                    .map(|&(j, w)| (new_index[j], w))
                    .collect();
                row.sort_by_key(|&(j, _)| j);
                row
            })
            .collect();
        Self {
            n: kept.len(),
            rows,
            symmetric: self.symmetric,
        }
    }

    /// Relabels nodes so that original node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut rows: Vec<Vec<(usize, S)>> = vec![Vec::new(); self.n];
        for (i, row) in self.rows.iter().enumerate() {
            rows[perm[i]] = row.iter().map(|&(j, w)| (perm[j], w)).collect();
            rows[perm[i]].sort_by_key(|&(j, _)| j);
        }
        Self {
            n: self.n,
            rows,
            symmetric: self.symmetric,
        }
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().enumerate().flat_map(|(i, r)| {
            r.iter()
                .filter(move |&&(j, _)| i < j)
                .map(move |&(j, _)| (i, j))
        })
    }

    pub fn cast<T: Scalar>(&self) -> SparseAdj<T> {
        SparseAdj {
            n: self.n,
            rows: self
                .rows
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|&(j, w)| (j, T::of(w.to_f64_lossy())))
                        .collect()
                })
                .collect(),
            symmetric: self.symmetric,
        }
    }
}

pub fn spmm<S: Scalar>(adj: &SparseAdj<S>, x: &Matrix<S>) -> Result<Matrix<S>> {
    adj.spmm(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> SparseAdj<f64> {
        SparseAdj::undirected(3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn spmm_examples() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        assert_eq!(SparseAdj::empty(3).spmm(&x).unwrap(), Matrix::zeros(3, 1));
        let eye =
            SparseAdj::from_entries(3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)], true).unwrap();
        assert_eq!(eye.spmm(&x).unwrap(), x);
        let expected = Matrix::from_rows(&[[2.0], [4.0], [2.0]]).unwrap();
        assert_eq!(path3().spmm(&x).unwrap(), expected);
        assert_eq!(path3().to_dense().matmul(&x).unwrap(), expected);
    }

    #[test]
    fn spmm_rejects_node_count_mismatch() {
        assert!(matches!(
            path3().spmm(&Matrix::zeros(4, 1)),
            Err(Error::Shape { op: "spmm", .. })
        ));
    }

    #[test]
    fn from_entries_validates() {
        assert!(SparseAdj::<f64>::from_entries(2, &[(0, 1, 1.0), (0, 1, 1.0)], false).is_err());
        assert!(SparseAdj::<f64>::from_entries(2, &[(0, 2, 1.0)], false).is_err());
        assert!(SparseAdj::<f64>::from_entries(2, &[(0, 1, 1.0)], true).is_err());
        assert!(SparseAdj::<f64>::from_entries(2, &[(0, 1, 1.0), (1, 0, 2.0)], true).is_err());
        assert!(SparseAdj::<f64>::from_entries(2, &[(0, 1, 1.0), (1, 0, 1.0)], true).is_ok());
    }

    #[test]
    fn undirected_dedups_and_drops_self_pairs() {
        let a = SparseAdj::<f64>::undirected(3, [(0, 1), (1, 0), (2, 2)]).unwrap();
        assert_eq!(a.nnz(), 2);
        assert!(!a.has_self_loops());
        assert_eq!(a.edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn induced_keeps_only_internal_edges() {
        let a = SparseAdj::<f64>::undirected(4, [(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let sub = a.induced(&[0, 1, 3]);
        assert_eq!(sub.n(), 3);
        assert_eq!(sub.edges().collect::<Vec<_>>(), vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn transpose_of_directed() {
        let a = SparseAdj::<f64>::from_entries(3, &[(0, 2, 1.5), (1, 0, 2.0)], false).unwrap();
        assert_eq!(a.transpose().to_dense(), a.to_dense().transpose());
    }
}
