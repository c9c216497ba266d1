//! Synthetic TU-format fixtures shared by the CLI test targets.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use gnnlab::numcore::Rng;

/// Shape of a synthetic corpus.
pub struct Recipe {
    pub name: &'static str,
    /// Graphs per class.
    pub class_sizes: Vec<usize>,
    /// Mean node count per class.
    pub mean_nodes: Vec<f64>,
    /// Node-label distribution per class; `None` writes no node labels.
    pub label_probs: Option<Vec<Vec<f64>>>,
    /// Probability of a link between backbone nodes 2..=4 apart.
    pub local_density: f64,
    pub seed: u64,
}

impl Recipe {
    /// Protein-like stand-in: 1113 graphs (663 / 450), about 39 nodes on
    /// average, a chain backbone with short-range contacts and three node
    /// labels whose mix depends weakly on the class.
    pub fn proteins_like(seed: u64) -> Self {
        Self {
            name: "PROTEINS",
            class_sizes: vec![663, 450],
            mean_nodes: vec![42.0, 26.0],
            label_probs: Some(vec![vec![0.45, 0.45, 0.10], vec![0.38, 0.48, 0.14]]),
            local_density: 0.25,
            seed,
        }
    }

    pub fn tiny(name: &'static str, seed: u64) -> Self {
        Self {
            name,
            class_sizes: vec![24, 16],
            mean_nodes: vec![9.0, 6.0],
            label_probs: Some(vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.3, 0.5]]),
            local_density: 0.3,
            seed,
        }
    }
}

fn pick(rng: &mut Rng, probs: &[f64]) -> usize {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Writes `{name}_A.txt`, `_graph_indicator`, `_graph_labels` and (when
/// configured) `_node_labels` into `dir`. Graph order interleaves classes
/// deterministically.
pub fn write_synthetic(recipe: &Recipe, dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = Rng::new(recipe.seed);
    let mut labels: Vec<usize> = recipe
        .class_sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    rng.shuffle(&mut labels);

    let (mut a, mut ind, mut glab, mut nlab) =
        (String::new(), String::new(), String::new(), String::new());
    let mut offset = 0usize;
    for (g, &class) in labels.iter().enumerate() {
        // Log-normal-ish spread around the class mean, at least 4 nodes.
        let spread = (0.45 * rng.normal()).exp();
        let n = ((recipe.mean_nodes[class] * spread).round() as usize).max(4);
        // Per-graph jitter of the label mix keeps the classes overlapping.
        let probs = recipe.label_probs.as_ref().map(|p| {
            let mut q: Vec<f64> = p[class]
                .iter()
                .map(|&v| (v * (0.6 * rng.normal()).exp()).max(1e-3))
                .collect();
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= s);
            q
        });
        for i in 0..n {
            let _ = writeln!(ind, "{}", g + 1);
            if let Some(p) = &probs {
                let _ = writeln!(nlab, "{}", pick(&mut rng, p));
            }
            let mut link = |j: usize| {
                let _ = writeln!(a, "{}, {}", offset + i + 1, offset + j + 1);
                let _ = writeln!(a, "{}, {}", offset + j + 1, offset + i + 1);
            };
            if i + 1 < n {
                link(i + 1);
            }
            for d in 2..=4 {
                if i + d < n && rng.next_f64() < recipe.local_density {
                    link(i + d);
                }
            }
        }
        let _ = writeln!(glab, "{}", class + 1);
        offset += n;
    }
    let name = recipe.name;
    std::fs::write(dir.join(format!("{name}_A.txt")), a).unwrap();
    std::fs::write(dir.join(format!("{name}_graph_indicator.txt")), ind).unwrap();
    std::fs::write(dir.join(format!("{name}_graph_labels.txt")), glab).unwrap();
    if recipe.label_probs.is_some() {
        std::fs::write(dir.join(format!("{name}_node_labels.txt")), nlab).unwrap();
    }
}
