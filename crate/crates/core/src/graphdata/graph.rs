use serde::{Deserialize, Serialize};

use crate::numcore::{Matrix, SparseAdj};
use crate::scalar::Scalar;

/// One classification instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph<S> {
    pub adj: SparseAdj<S>,
    pub features: Matrix<S>,
    pub label: usize,
    /// Position of the graph in its source dataset.
    pub id: usize,
}

impl<S: Scalar> Graph<S> {
    pub fn num_nodes(&self) -> usize {
        self.adj.n()
    }

    /// Relabels nodes so that node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Self {
            adj: self.adj.permuted(perm),
            features: self.features.select_rows(&inverse),
            label: self.label,
            id: self.id,
        }
    }

    pub fn cast<T: Scalar>(&self) -> Graph<T> {
        Graph {
            adj: self.adj.cast(),
            features: self.features.cast(),
            label: self.label,
            id: self.id,
        }
    }
}

/// How node features were derived for a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePolicy {
    /// Continuous node attributes as given.
    Attributes,
    /// One-hot encoding of discrete node labels.
    LabelOnehot,
    /// One-hot node degree, capped with an overflow bucket.
    DegreeOnehot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub name: String,
    pub graphs: Vec<Graph<S>>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub feature_policy: FeaturePolicy,
    /// Raw self-loop lines dropped while parsing.
    pub self_loops_dropped: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for g in &self.graphs {
            counts[g.label] += 1;
        }
        counts
    }

    pub fn cast<T: Scalar>(&self) -> Dataset<T> {
        Dataset {
            name: self.name.clone(),
            graphs: self.graphs.iter().map(Graph::cast).collect(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            feature_policy: self.feature_policy,
            self_loops_dropped: self.self_loops_dropped,
        }
    }
}
