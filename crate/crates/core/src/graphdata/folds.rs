use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numcore::Rng;
use crate::scalar::Scalar;

pub const DEFAULT_FOLD_SEED: u64 = 12345;

/// Assignment of every graph to one of `fold_count` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_count: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldSplit {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified assignment: each class is shuffled and dealt round-robin,
/// continuing where the previous class stopped so fold sizes stay balanced.
pub fn stratify(labels: &[usize], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Stratification(format!(
            "need at least 2 folds, got {k}"
        )));
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    if let Some((c, m)) = members
        .iter()
        .enumerate()
        .find(|(_, m)| !m.is_empty() && m.len() < k)
    {
        return Err(Error::Stratification(format!(
            "class {c} has {} members, fewer than {k} folds",
            m.len()
        )));
    }
    let mut rng = Rng::new(seed);
    let mut assignments = vec![0; labels.len()];
    let mut offset = 0;
    for class in &mut members {
        rng.shuffle(class);
        for (r, &i) in class.iter().enumerate() {
            assignments[i] = (offset + r) % k;
        }
        offset = (offset + class.len()) % k;
    }
    Ok(FoldSplit {
        fold_count: k,
        assignments,
        seed,
    })
}

pub fn stratified_folds<S: Scalar>(ds: &Dataset<S>, k: usize, seed: u64) -> Result<FoldSplit> {
    stratify(&ds.labels(), k, seed)
}
