//! Dataset ingestion and preparation: the TU text format, feature synthesis
//! and normalization, stratified splitting, and a synthetic benchmark whose
//! classes differ only in spectral content.
//!
//! TU layout, per dataset `NAME` in one directory: `NAME_A.txt` with one
//! "i, j" edge per line (1-based global node ids, both directions listed),
//! `NAME_graph_indicator.txt` with one 1-based graph id per node,
//! `NAME_graph_labels.txt` with one integer per graph, and optionally
//! `NAME_node_labels.txt` / `NAME_node_attributes.txt`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::spectral::eig_laplacian;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing dataset file {}", path.display())]
    MissingFile { path: PathBuf },
    #[error("reading {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{file}:{line}: edge joins nodes from different graphs")]
    EdgeCrossesGraphs { file: String, line: usize },
    #[error("{file}: expected {expected} lines, found {got}")]
    LineCountMismatch { file: String, expected: usize, got: usize },
    #[error("{file}:{line}: row has {got} attributes, expected {expected}")]
    RaggedAttributes { file: String, line: usize, expected: usize, got: usize },
    #[error("graph {graph} has no nodes")]
    EmptyGraph { graph: usize },
    #[error("dataset has no graphs")]
    EmptyDataset,
    #[error("class {class} has only {count} members; stratified splitting needs 3")]
    TinyClass { class: usize, count: usize },
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// How node features were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// One-hot of the categorical node label.
    CategoricalOnehot,
    /// Real-valued node attributes as given.
    Attributes,
    /// One-hot label columns followed by attribute columns.
    CategoricalAttributes,
    /// Degree one-hot plus clustering coefficient, synthesized when the
    /// dataset ships no node information.
    StructuralSynthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph<f64>>,
    pub num_classes: usize,
    pub feature_kind: FeatureKind,
    /// Sorted categorical node-label alphabet; empty unless labels present.
    pub node_label_alphabet: Vec<i64>,
    /// Trailing attribute columns in each feature matrix; 0 if none.
    pub attr_width: usize,
    /// Degree one-hot cap used for synthesized features; 0 otherwise.
    pub max_degree: usize,
}

impl Dataset {
    pub fn feature_width(&self) -> usize {
        self.graphs.first().map_or(0, |g| g.feature_width())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label()).collect()
    }
}

/// Headline numbers of a dataset.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub num_graphs: usize,
    pub num_classes: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
    pub feature_width: usize,
    pub feature_kind: FeatureKind,
}

pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let n = ds.graphs.len() as f64;
    DatasetStats {
        name: ds.name.clone(),
        num_graphs: ds.graphs.len(),
        num_classes: ds.num_classes,
        mean_nodes: ds.graphs.iter().map(|g| g.num_nodes() as f64).sum::<f64>() / n,
        mean_edges: ds.graphs.iter().map(|g| g.num_edges() as f64).sum::<f64>() / n,
        feature_width: ds.feature_width(),
        feature_kind: ds.feature_kind,
    }
}

/// Disjoint train/validation/test index lists over a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(DataError::MissingFile { path: path.to_path_buf() })
        }
        Err(e) => return Err(DataError::Io { path: path.to_path_buf(), source: e }),
    };
    // Keep 1-based line numbers for diagnostics; trailing blank lines are
    // tolerated, interior ones are not meaningful and are dropped with the
    // same rule.
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn file_stem(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

struct NumberedLines<'a> {
    file: String,
    lines: &'a [String],
}

impl<'a> NumberedLines<'a> {
    fn new(file: String, lines: &'a [String]) -> Self {
        Self { file, lines }
    }

    /// Non-blank lines with their 1-based numbers.
    fn iter(&self) -> impl Iterator<Item = (usize, &'a str)> {
        self.lines
            .iter()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
    }

    fn parse_int(&self, line: usize, field: &str) -> Result<i64, DataError> {
        field.trim().parse::<i64>().map_err(|_| DataError::Parse {
            file: self.file.clone(),
            line,
            msg: format!("expected an integer, got {field:?}"),
        })
    }

    fn parse_real(&self, line: usize, field: &str) -> Result<f64, DataError> {
        field.trim().parse::<f64>().map_err(|_| DataError::Parse {
            file: self.file.clone(),
            line,
            msg: format!("expected a real number, got {field:?}"),
        })
    }
}

/// Parses one TU-format dataset from `dir`.
///
/// Edge lines give each undirected edge in both directions; the pair is
/// stored once with unit weight. A directed entry repeated verbatim is
/// coalesced with a warning. Graph labels may be arbitrary integers and are
/// remapped to 0..C-1 by sorted order. Datasets without node labels or
/// attributes get synthesized structural features.
pub fn parse_tu_dataset(dir: &Path, name: &str) -> Result<Dataset, DataError> {
    let ind_path = file_stem(dir, name, "graph_indicator");
    let ind_lines = read_lines(&ind_path)?;
    let ind = NumberedLines::new(ind_path.display().to_string(), &ind_lines);
    let mut graph_of_node: Vec<usize> = Vec::new();
    for (ln, l) in ind.iter() {
        let gid = ind.parse_int(ln, l)?;
        if gid < 1 {
            return Err(DataError::Parse {
                file: ind.file.clone(),
                line: ln,
                msg: format!("graph ids are 1-based, got {gid}"),
            });
        }
        graph_of_node.push(gid as usize - 1);
    }
    if graph_of_node.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let num_graphs = graph_of_node.iter().max().unwrap() + 1;
    let total_nodes = graph_of_node.len();

    let mut node_count = vec![0usize; num_graphs];
    let mut local_of_node = Vec::with_capacity(total_nodes);
    for &g in &graph_of_node {
        local_of_node.push(node_count[g]);
        node_count[g] += 1;
    }
    if let Some(g) = node_count.iter().position(|&c| c == 0) {
        return Err(DataError::EmptyGraph { graph: g + 1 });
    }

    let lab_path = file_stem(dir, name, "graph_labels");
    let lab_lines = read_lines(&lab_path)?;
    let lab = NumberedLines::new(lab_path.display().to_string(), &lab_lines);
    let mut raw_labels = Vec::with_capacity(num_graphs);
    for (ln, l) in lab.iter() {
        raw_labels.push(lab.parse_int(ln, l)?);
    }
    if raw_labels.len() != num_graphs {
        return Err(DataError::LineCountMismatch {
            file: lab.file.clone(),
            expected: num_graphs,
            got: raw_labels.len(),
        });
    }
    let alphabet: Vec<i64> = raw_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let class_of: BTreeMap<i64, usize> =
        alphabet.iter().enumerate().map(|(c, &v)| (v, c)).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|v| class_of[v]).collect();
    let num_classes = alphabet.len();

    let a_path = file_stem(dir, name, "A");
    let a_lines = read_lines(&a_path)?;
    let a = NumberedLines::new(a_path.display().to_string(), &a_lines);
    let mut seen_directed: HashSet<(usize, usize)> = HashSet::new();
    let mut edges: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_graphs];
    for (ln, l) in a.iter() {
        let mut parts = l.splitn(2, ',');
        let (i_raw, j_raw) = match (parts.next(), parts.next()) {
            (Some(i), Some(j)) => (i, j),
            _ => {
                return Err(DataError::Parse {
                    file: a.file.clone(),
                    line: ln,
                    msg: format!("expected \"i, j\", got {l:?}"),
                })
            }
        };
        let i = a.parse_int(ln, i_raw)?;
        let j = a.parse_int(ln, j_raw)?;
        if i < 1 || j < 1 || i as usize > total_nodes || j as usize > total_nodes {
            return Err(DataError::Parse {
                file: a.file.clone(),
                line: ln,
                msg: format!("node id out of range 1..={total_nodes}"),
            });
        }
        let (i, j) = (i as usize - 1, j as usize - 1);
        if graph_of_node[i] != graph_of_node[j] {
            return Err(DataError::EdgeCrossesGraphs { file: a.file.clone(), line: ln });
        }
        if !seen_directed.insert((i, j)) {
            log::warn!("{}:{}: repeated directed edge ({}, {}) coalesced", a.file, ln, i + 1, j + 1);
            continue;
        }
        let key = (local_of_node[i.min(j)], local_of_node[i.max(j)]);
        edges[graph_of_node[i]].insert(key);
    }

    let nl_path = file_stem(dir, name, "node_labels");
    let node_labels: Option<Vec<i64>> = if nl_path.exists() {
        let lines = read_lines(&nl_path)?;
        let nl = NumberedLines::new(nl_path.display().to_string(), &lines);
        let mut vals = Vec::with_capacity(total_nodes);
        for (ln, l) in nl.iter() {
            vals.push(nl.parse_int(ln, l)?);
        }
        if vals.len() != total_nodes {
            return Err(DataError::LineCountMismatch {
                file: nl.file.clone(),
                expected: total_nodes,
                got: vals.len(),
            });
        }
        Some(vals)
    } else {
        None
    };

    let na_path = file_stem(dir, name, "node_attributes");
    let node_attrs: Option<Vec<Vec<f64>>> = if na_path.exists() {
        let lines = read_lines(&na_path)?;
        let na = NumberedLines::new(na_path.display().to_string(), &lines);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(total_nodes);
        for (ln, l) in na.iter() {
            let row: Vec<f64> = l
                .split(',')
                .map(|f| na.parse_real(ln, f))
                .collect::<Result<_, _>>()?;
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(DataError::RaggedAttributes {
                        file: na.file.clone(),
                        line: ln,
                        expected: first.len(),
                        got: row.len(),
                    });
                }
            }
            rows.push(row);
        }
        if rows.len() != total_nodes {
            return Err(DataError::LineCountMismatch {
                file: na.file.clone(),
                expected: total_nodes,
                got: rows.len(),
            });
        }
        Some(rows)
    } else {
        None
    };

    for suffix in ["edge_labels", "edge_attributes"] {
        let p = file_stem(dir, name, suffix);
        if p.exists() {
            log::warn!("{}: edge annotations are not used, ignoring", p.display());
        }
    }

    let node_label_alphabet: Vec<i64> = node_labels
        .as_ref()
        .map(|v| v.iter().copied().collect::<BTreeSet<_>>().into_iter().collect())
        .unwrap_or_default();
    let attr_width = node_attrs.as_ref().map_or(0, |r| r[0].len());
    let feature_kind = match (&node_labels, &node_attrs) {
        (Some(_), Some(_)) => FeatureKind::CategoricalAttributes,
        (Some(_), None) => FeatureKind::CategoricalOnehot,
        (None, Some(_)) => FeatureKind::Attributes,
        (None, None) => FeatureKind::StructuralSynthetic,
    };

    // Nodes of one graph keep their file order; global node id = offset of
    // the graph plus the local id, which the per-graph grouping preserves.
    let mut nodes_of_graph: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    for (node, &g) in graph_of_node.iter().enumerate() {
        nodes_of_graph[g].push(node);
    }

    let mut graphs: Vec<Graph<f64>> = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        let n = node_count[g];
        let edge_list: Vec<(usize, usize, f64)> =
            edges[g].iter().map(|&(u, v)| (u, v, 1.0)).collect();
        let graph = Graph::build(n, &edge_list, Array2::zeros((n, 0)), labels[g])?;
        graphs.push(graph);
    }

    let max_degree = match feature_kind {
        FeatureKind::StructuralSynthetic => graphs
            .iter()
            .flat_map(|g| (0..g.num_nodes()).map(|i| g.neighbor_count(i)))
            .max()
            .unwrap_or(0),
        _ => 0,
    };

    let features: Vec<Array2<f64>> = (0..num_graphs)
        .map(|g| {
            let n = node_count[g];
            match feature_kind {
                FeatureKind::StructuralSynthetic => {
                    synthesize_structural_features(&graphs[g], max_degree)
                }
                _ => {
                    let width = node_label_alphabet.len() + attr_width;
                    let mut f = Array2::<f64>::zeros((n, width));
                    for (local, &node) in nodes_of_graph[g].iter().enumerate() {
                        if let Some(nl) = &node_labels {
                            let pos = node_label_alphabet
                                .binary_search(&nl[node])
                                .expect("alphabet covers every label");
                            f[[local, pos]] = 1.0;
                        }
                        if let Some(na) = &node_attrs {
                            for (k, &v) in na[node].iter().enumerate() {
                                f[[local, node_label_alphabet.len() + k]] = v;
                            }
                        }
                    }
                    f
                }
            }
        })
        .collect();
    let graphs: Vec<Graph<f64>> = graphs
        .into_iter()
        .zip(features)
        .map(|(g, f)| g.with_features(f))
        .collect::<Result<_, _>>()?;

    Ok(Dataset {
        name: name.to_string(),
        graphs,
        num_classes,
        feature_kind,
        node_label_alphabet,
        attr_width,
        max_degree,
    })
}

/// Serializes a dataset back to TU text files; the inverse of
/// [`parse_tu_dataset`] for datasets it produced.
pub fn write_tu_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    // Stage through a sibling tmp file so readers never see a truncated
    // dataset file.
    let write = |path: PathBuf, body: String| -> Result<(), DataError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, body)
            .and_then(|()| std::fs::rename(&tmp, &path))
            .map_err(|e| DataError::Io { path, source: e })
    };

    let mut a = String::new();
    let mut indicator = String::new();
    let mut labels = String::new();
    let mut base = 0usize;
    for (gi, g) in ds.graphs.iter().enumerate() {
        for i in 0..g.num_nodes() {
            for (j, _) in g.neighbors(i) {
                if j > i {
                    let _ = writeln!(a, "{}, {}", base + i + 1, base + j + 1);
                    let _ = writeln!(a, "{}, {}", base + j + 1, base + i + 1);
                } else if j == i {
                    let _ = writeln!(a, "{}, {}", base + i + 1, base + i + 1);
                }
            }
            let _ = writeln!(indicator, "{}", gi + 1);
        }
        let _ = writeln!(labels, "{}", g.label());
        base += g.num_nodes();
    }
    write(file_stem(dir, &ds.name, "A"), a)?;
    write(file_stem(dir, &ds.name, "graph_indicator"), indicator)?;
    write(file_stem(dir, &ds.name, "graph_labels"), labels)?;

    let onehot_width = ds.node_label_alphabet.len();
    if matches!(ds.feature_kind, FeatureKind::CategoricalOnehot | FeatureKind::CategoricalAttributes)
    {
        let mut body = String::new();
        for g in &ds.graphs {
            for row in g.features().rows() {
                let pos = (0..onehot_width)
                    .max_by(|&x, &y| row[x].partial_cmp(&row[y]).expect("finite one-hot"))
                    .expect("non-empty alphabet");
                let _ = writeln!(body, "{}", ds.node_label_alphabet[pos]);
            }
        }
        write(file_stem(dir, &ds.name, "node_labels"), body)?;
    }
    if matches!(ds.feature_kind, FeatureKind::Attributes | FeatureKind::CategoricalAttributes) {
        let mut body = String::new();
        for g in &ds.graphs {
            for row in g.features().rows() {
                let vals: Vec<String> = row
                    .iter()
                    .skip(if ds.feature_kind == FeatureKind::CategoricalAttributes {
                        onehot_width
                    } else {
                        0
                    })
                    .map(|v| format!("{v}"))
                    .collect();
                let _ = writeln!(body, "{}", vals.join(", "));
            }
        }
        write(file_stem(dir, &ds.name, "node_attributes"), body)?;
    }
    Ok(())
}

/// Min-max scales each attribute column to `[0, 1]` over the whole dataset,
/// leaving any leading one-hot columns alone. Constant columns map to 0.
/// Idempotent.
pub fn normalize_attributes(ds: &mut Dataset) {
    if ds.attr_width == 0 {
        return;
    }
    let width = ds.feature_width();
    let first_attr = width - ds.attr_width;
    let mut lo = vec![f64::INFINITY; ds.attr_width];
    let mut hi = vec![f64::NEG_INFINITY; ds.attr_width];
    for g in &ds.graphs {
        for row in g.features().rows() {
            for k in 0..ds.attr_width {
                let v = row[first_attr + k];
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
    }
    let graphs = std::mem::take(&mut ds.graphs);
    ds.graphs = graphs
        .into_iter()
        .map(|g| {
            let mut f = g.features().clone();
            for mut row in f.rows_mut() {
                for k in 0..ds.attr_width {
                    let span = hi[k] - lo[k];
                    row[first_attr + k] = if span > 0.0 {
                        (row[first_attr + k] - lo[k]) / span
                    } else {
                        0.0
                    };
                }
            }
            g.with_features(f).expect("row count unchanged")
        })
        .collect();
}

/// Degree one-hot (capped at `max_degree`) concatenated with the local
/// clustering coefficient; width `max_degree + 2`.
pub fn synthesize_structural_features(g: &Graph<f64>, max_degree: usize) -> Array2<f64> {
    let n = g.num_nodes();
    let mut f = Array2::<f64>::zeros((n, max_degree + 2));
    for i in 0..n {
        let neigh: Vec<usize> = g.neighbors(i).map(|(j, _)| j).filter(|&j| j != i).collect();
        let deg = neigh.len();
        f[[i, deg.min(max_degree)]] = 1.0;
        if deg >= 2 {
            let mut closed = 0usize;
            for (a, &u) in neigh.iter().enumerate() {
                for &v in &neigh[a + 1..] {
                    // CSR columns are sorted, so adjacency is a binary search.
                    let hit = g
                        .neighbors(u)
                        .any(|(w, _)| w == v);
                    if hit {
                        closed += 1;
                    }
                }
            }
            f[[i, max_degree + 1]] = 2.0 * closed as f64 / (deg * (deg - 1)) as f64;
        }
    }
    f
}

/// Stratified split by label. Within each class, indices are shuffled and
/// allocated round(r_train·n_c) / round(r_val·n_c) / remainder, rounding
/// half away from zero; single graphs are then moved between splits until
/// the global sizes are exactly round(r_train·N) / round(r_val·N) /
/// remainder. A move may only draw on a class sitting at or above its
/// exact share in the source split and at or below it in the destination,
/// which keeps every class within one graph of its share throughout.
pub fn stratified_split(
    labels: &[usize],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitIndices, DataError> {
    let (rt, rv, rs) = ratios;
    let ok = rt > 0.0 && rv > 0.0 && rs > 0.0 && (rt + rv + rs - 1.0).abs() < 1e-9;
    if !ok {
        return Err(DataError::BadRatios(format!("{ratios:?}")));
    }
    if labels.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    for (c, m) in members.iter().enumerate() {
        if m.len() < 3 {
            return Err(DataError::TinyClass { class: c, count: m.len() });
        }
    }

    let round_half_away = |x: f64| -> usize { (x + 0.5).floor() as usize };
    let n_total = labels.len();
    let target_train = round_half_away(rt * n_total as f64);
    let target_val = round_half_away(rv * n_total as f64);
    let target = [target_train, target_val, n_total - target_train - target_val];

    // counts[c] = (train, val, test) for class c.
    let mut counts: Vec<[usize; 3]> = members
        .iter()
        .map(|m| {
            let n_c = m.len();
            let t = round_half_away(rt * n_c as f64).min(n_c);
            let v = round_half_away(rv * n_c as f64).min(n_c - t);
            [t, v, n_c - t - v]
        })
        .collect();

    let ratio = [rt, rv, rs];
    let err = |counts: &[[usize; 3]], c: usize, s: usize| {
        counts[c][s] as f64 - ratio[s] * members[c].len() as f64
    };
    loop {
        let totals: [usize; 3] =
            [0usize, 1, 2].map(|s| counts.iter().map(|c| c[s]).sum::<usize>());
        let Some(src) = (0..3usize).find(|&s| totals[s] > target[s]) else { break };
        let dst = (0..3usize).find(|&s| totals[s] < target[s]).expect("totals sum to N");
        // Prefer a donor the move cannot push past one graph of its share
        // on either side; among those, the class the move repairs most.
        // The first such class wins ties.
        let mut donor = None;
        let mut best_safe = false;
        let mut best_gain = f64::NEG_INFINITY;
        for c in 0..num_classes {
            if counts[c][src] == 0 {
                continue;
            }
            let e_src = err(&counts, c, src);
            let e_dst = err(&counts, c, dst);
            let safe = e_src >= -1e-9 && e_dst <= 1e-9;
            let gain = e_src - e_dst;
            if (safe && !best_safe) || (safe == best_safe && gain > best_gain) {
                donor = Some(c);
                best_safe = safe;
                best_gain = gain;
            }
        }
        let donor = donor.expect("some class holds a graph in the overfull split");
        counts[donor][src] -= 1;
        counts[donor][dst] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = SplitIndices { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (c, m) in members.iter().enumerate() {
        let mut idx = m.clone();
        idx.shuffle(&mut rng);
        let [t, v, _] = counts[c];
        split.train.extend(&idx[..t]);
        split.val.extend(&idx[t..t + v]);
        split.test.extend(&idx[t + v..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Connected random graph: a uniform random spanning tree plus extra edges.
fn random_connected_graph(n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, f64)> {
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        edges.insert((j, i));
    }
    let extra = (0.2 * n as f64).round() as usize;
    let mut added = 0;
    while added < extra {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j && edges.insert((i.min(j), i.max(j))) {
            added += 1;
        }
    }
    edges.into_iter().map(|(u, v)| (u, v, 1.0)).collect()
}

/// Two-class benchmark labeled by frequency band: class-0 signals live on
/// the 3 lowest Laplacian eigenvectors, class-1 on the 3 highest, both
/// scaled to unit per-node energy plus N(0, 0.05^2) noise. The low band
/// includes the Perron eigenvector, so first-order node statistics leak the
/// label; see the README's known limitations.
pub fn synthetic_spectral_dataset(n_graphs: usize, nodes_per_graph: usize, seed: u64) -> Dataset {
    assert!(nodes_per_graph >= 8, "need at least 8 nodes per graph");
    let n = nodes_per_graph;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let sigma = 0.05;
    let mut graphs = Vec::with_capacity(n_graphs);
    for gi in 0..n_graphs {
        let label = gi % 2;
        let edges = random_connected_graph(n, &mut rng);
        let skeleton = Graph::build(n, &edges, Array2::zeros((n, 1)), label).expect("valid edges");
        let basis = eig_laplacian(&skeleton).expect("small graph");
        let bands: Vec<usize> = if label == 0 {
            (0..3).collect()
        } else {
            (n - 3..n).collect()
        };
        let mut x = vec![0.0f64; n];
        for &k in &bands {
            let c: f64 = normal.sample(&mut rng);
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += c * basis.eigenvectors()[[i, k]];
            }
        }
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let scale = (n as f64 / energy).sqrt();
        let features = Array2::from_shape_fn((n, 1), |(i, _)| {
            let noise: f64 = normal.sample(&mut rng);
            x[i] * scale + sigma * noise
        });
        graphs.push(skeleton.with_features(features).expect("row count fixed"));
    }
    Dataset {
        name: "synthetic-spectral".into(),
        graphs,
        num_classes: 2,
        feature_kind: FeatureKind::Attributes,
        node_label_alphabet: Vec::new(),
        attr_width: 1,
        max_degree: 0,
    }
}
