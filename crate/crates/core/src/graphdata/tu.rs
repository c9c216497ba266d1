//! Reader and writer for the TU multi-file plain-text format.
//!
//! Mandatory files are `{name}_A.txt` (1-indexed `i, j` edge lines),
//! `{name}_graph_indicator.txt` (graph id per node) and
//! `{name}_graph_labels.txt` (class per graph). Node labels and node
//! attributes are optional.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::warn;

use super::{Dataset, FeaturePolicy, Graph};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, SparseAdj};

pub const DEFAULT_DEGREE_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOptions {
    /// Forces a feature policy. `None` picks attributes, then node labels,
    /// then degrees, whichever is available first.
    pub policy: Option<FeaturePolicy>,
    /// Width of the degree one-hot; degrees `>= cap - 1` share the last column.
    pub degree_cap: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            policy: None,
            degree_cap: DEFAULT_DEGREE_CAP,
        }
    }
}

struct TextFile {
    label: String,
    lines: Vec<(usize, String)>,
}

impl TextFile {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Ingest(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim().to_string()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Ok(Self {
            label: path.file_name().map_or_else(
                || path.display().to_string(),
                |f| f.to_string_lossy().into_owned(),
            ),
            lines,
        })
    }

    fn parse_err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            file: self.label.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn consistency_err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Consistency {
            file: self.label.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn tokens<'a>(&self, line: usize, text: &'a str) -> Result<Vec<&'a str>> {
        let toks: Vec<&str> = text.split(',').map(str::trim).collect();
        if toks.iter().any(|t| t.is_empty()) {
            return Err(self.parse_err(line, format!("empty field in {text:?}")));
        }
        Ok(toks)
    }

    fn ints(&self) -> Result<Vec<(usize, Vec<i64>)>> {
        self.lines
            .iter()
            .map(|(n, l)| {
                let vals = self
                    .tokens(*n, l)?
                    .into_iter()
                    .map(|t| {
                        t.parse::<i64>()
                            .map_err(|_| self.parse_err(*n, format!("not an integer: {t:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((*n, vals))
            })
            .collect()
    }

    fn single_ints(&self) -> Result<Vec<(usize, i64)>> {
        Ok(self.ints()?.into_iter().map(|(n, v)| (n, v[0])).collect())
    }

    fn floats(&self) -> Result<Vec<(usize, Vec<f64>)>> {
        self.lines
            .iter()
            .map(|(n, l)| {
                let vals = self
                    .tokens(*n, l)?
                    .into_iter()
                    .map(|t| match t.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => Err(self.parse_err(*n, format!("not a finite number: {t:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((*n, vals))
            })
            .collect()
    }
}

fn file_path(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

/// Parses `{dir}/{name}_*.txt` with default options.
pub fn parse_tu(dir: &Path, name: &str) -> Result<Dataset<f64>> {
    parse_tu_with(dir, name, &ParseOptions::default())
}

pub fn parse_tu_with(dir: &Path, name: &str, opts: &ParseOptions) -> Result<Dataset<f64>> {
    if opts.degree_cap == 0 {
        return Err(Error::Domain("degree cap must be at least 1".into()));
    }
    let edges_file = TextFile::read(&file_path(dir, name, "A"))?;
    let indicator_file = TextFile::read(&file_path(dir, name, "graph_indicator"))?;
    let labels_file = TextFile::read(&file_path(dir, name, "graph_labels"))?;

    // Node -> graph membership.
    let indicator = indicator_file.single_ints()?;
    let graph_ids: Vec<i64> = {
        let mut ids: Vec<i64> = indicator.iter().map(|&(_, g)| g).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let graph_of_id: BTreeMap<i64, usize> =
        graph_ids.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let num_graphs = graph_ids.len();
    let mut node_graph = Vec::with_capacity(indicator.len());
    let mut node_local = Vec::with_capacity(indicator.len());
    let mut graph_sizes = vec![0usize; num_graphs];
    for &(_, gid) in &indicator {
        let g = graph_of_id[&gid];
        node_graph.push(g);
        node_local.push(graph_sizes[g]);
        graph_sizes[g] += 1;
    }
    let num_nodes = node_graph.len();

    // Graph labels, remapped to a contiguous 0-based range.
    let raw_labels = labels_file.single_ints()?;
    if raw_labels.len() != num_graphs {
        let line = raw_labels.last().map_or(0, |&(n, _)| n);
        return Err(labels_file.consistency_err(
            line,
            format!("{} graph labels for {num_graphs} graphs", raw_labels.len()),
        ));
    }
    let mut distinct: Vec<i64> = raw_labels.iter().map(|&(_, l)| l).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let label_index: BTreeMap<i64, usize> =
        distinct.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    // Edge lists per graph, in local indices.
    let mut pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    let mut self_loops = 0usize;
    for (line, vals) in edges_file.ints()? {
        if vals.len() != 2 {
            return Err(
                edges_file.parse_err(line, format!("expected 2 fields, got {}", vals.len()))
            );
        }
        let node = |v: i64| -> Result<usize> {
            if v < 1 || v as usize > num_nodes {
                return Err(
                    edges_file.consistency_err(line, format!("node {v} outside 1..={num_nodes}"))
                );
            }
            Ok(v as usize - 1)
        };
        let (i, j) = (node(vals[0])?, node(vals[1])?);
        if node_graph[i] != node_graph[j] {
            return Err(edges_file.consistency_err(
                line,
                format!("edge {}-{} joins nodes of different graphs", i + 1, j + 1),
            ));
        }
        if i == j {
            self_loops += 1;
            continue;
        }
        pairs[node_graph[i]].push((node_local[i], node_local[j]));
    }
    if self_loops > 0 {
        warn!("{name}: dropped {self_loops} self-loop lines");
    }
    let adjs = pairs
        .into_iter()
        .zip(&graph_sizes)
        .map(|(p, &n)| SparseAdj::<f64>::undirected(n, p))
        .collect::<Result<Vec<_>>>()?;

    // Node features.
    let attr_path = file_path(dir, name, "node_attributes");
    let nlabel_path = file_path(dir, name, "node_labels");
    let policy = match opts.policy {
        Some(p) => p,
        None if attr_path.exists() => FeaturePolicy::Attributes,
        None if nlabel_path.exists() => FeaturePolicy::LabelOnehot,
        None => FeaturePolicy::DegreeOnehot,
    };
    let (feature_dim, node_rows): (usize, Vec<Vec<f64>>) = match policy {
        FeaturePolicy::Attributes => {
            let f = TextFile::read(&attr_path)?;
            let rows = f.floats()?;
            check_per_node(&f, rows.len(), num_nodes)?;
            let dim = rows.first().map_or(0, |(_, r)| r.len());
            if let Some((line, _)) = rows.iter().find(|(_, r)| r.len() != dim) {
                return Err(f.parse_err(*line, format!("expected {dim} attributes")));
            }
            (dim, rows.into_iter().map(|(_, r)| r).collect())
        }
        FeaturePolicy::LabelOnehot => {
            let f = TextFile::read(&nlabel_path)?;
            let labels = f.single_ints()?;
            check_per_node(&f, labels.len(), num_nodes)?;
            let mut values: Vec<i64> = labels.iter().map(|&(_, l)| l).collect();
            values.sort_unstable();
            values.dedup();
            let dim = values.len();
            let rows = labels
                .iter()
                .map(|&(_, l)| {
                    let mut row = vec![0.0; dim];
                    row[values.binary_search(&l).expect("label collected above")] = 1.0;
                    row
                })
                .collect();
            (dim, rows)
        }
        FeaturePolicy::DegreeOnehot => {
            let dim = opts.degree_cap;
            let rows = (0..num_nodes)
                .map(|v| {
                    let deg = adjs[node_graph[v]].degree(node_local[v]);
                    let mut row = vec![0.0; dim];
                    row[deg.min(dim - 1)] = 1.0;
                    row
                })
                .collect();
            (dim, rows)
        }
    };

    let mut per_graph: Vec<Vec<f64>> = graph_sizes
        .iter()
        .map(|&n| Vec::with_capacity(n * feature_dim))
        .collect();
    for (v, row) in node_rows.into_iter().enumerate() {
        per_graph[node_graph[v]].extend(row);
    }

    let graphs = adjs
        .into_iter()
        .zip(per_graph)
        .zip(&raw_labels)
        .enumerate()
        .map(|(id, ((adj, feats), &(_, raw)))| {
            let n = adj.n();
            Ok(Graph {
                adj,
                features: Matrix::from_vec(n, feature_dim, feats)?,
                label: label_index[&raw],
                id,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset {
        name: name.to_string(),
        graphs,
        num_classes: distinct.len(),
        feature_dim,
        feature_policy: policy,
        self_loops_dropped: self_loops,
    })
}

fn check_per_node(f: &TextFile, rows: usize, num_nodes: usize) -> Result<()> {
    if rows != num_nodes {
        let line = f.lines.last().map_or(0, |(n, _)| *n);
        return Err(f.consistency_err(line, format!("{rows} rows for {num_nodes} nodes")));
    }
    Ok(())
}

/// Writes `ds` in canonical TU form: both orientations of every edge,
/// 0-based graph labels and features as node attributes.
pub fn write_tu(ds: &Dataset<f64>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let open = |suffix: &str| -> Result<std::io::BufWriter<fs::File>> {
        Ok(std::io::BufWriter::new(fs::File::create(file_path(
            dir, &ds.name, suffix,
        ))?))
    };
    let mut a = open("A")?;
    let mut ind = open("graph_indicator")?;
    let mut lab = open("graph_labels")?;
    let mut attr = open("node_attributes")?;
    let mut offset = 0usize;
    for (gi, g) in ds.graphs.iter().enumerate() {
        for i in 0..g.num_nodes() {
            for &(j, _) in g.adj.neighbors(i) {
                writeln!(a, "{}, {}", offset + i + 1, offset + j + 1)?;
            }
            writeln!(ind, "{}", gi + 1)?;
            let row: Vec<String> = g.features.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(attr, "{}", row.join(", "))?;
        }
        writeln!(lab, "{}", g.label)?;
        offset += g.num_nodes();
    }
    for w in [&mut a, &mut ind, &mut lab, &mut attr] {
        w.flush()?;
    }
    Ok(())
}
