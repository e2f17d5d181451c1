//! Undirected weighted graphs in CSR form and normalized-Laplacian products.
//!
//! The symmetric normalized Laplacian `L = I - D^{-1/2} A D^{-1/2}` is never
//! materialized on the hot path; its action on a multi-channel signal is
//! computed row by row from the CSR adjacency in `O(|E| c)` for `c` columns.
//! Zero-degree nodes use `(D^{-1/2})_ii = 0`, so the corresponding Laplacian
//! row is `e_i` and isolated nodes pass signals through unchanged.

use ndarray::Array2;
use thiserror::Error;

use crate::scalar::Scalar;

/// Errors from graph construction, batching, and operator application.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("edge ({i}, {j}) out of range for a graph with {n} nodes")]
    EdgeOutOfRange { i: usize, j: usize, n: usize },
    #[error("edge ({i}, {j}) has weight {weight}; weights must be finite and non-negative")]
    BadEdgeWeight { i: usize, j: usize, weight: f64 },
    #[error("feature matrix has {got} rows but the graph has {n} nodes")]
    FeatureRowMismatch { got: usize, n: usize },
    #[error("signal has {got} rows but the operator expects {expected}")]
    SignalRowMismatch { got: usize, expected: usize },
    #[error("permutation of length {got} is not a bijection on 0..{n}")]
    BadPermutation { got: usize, n: usize },
    #[error("cannot batch an empty list of graphs")]
    EmptyBatch,
    #[error("graphs in a batch must share one feature width; saw {a} and {b}")]
    MixedFeatureWidth { a: usize, b: usize },
}

/// Undirected weighted graph with node features and a class label.
///
/// Invariants upheld by [`Graph::build`]:
/// - CSR rows are sorted by column and store both directions of every
///   undirected edge, so the adjacency is exactly symmetric;
/// - duplicate input edges are coalesced by summing their weights;
/// - self loops appear only when given explicitly, and only once;
/// - `inv_sqrt_deg[i]` is `1/sqrt(weighted degree)`, or `0` for isolated nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    weights: Vec<T>,
    inv_sqrt_deg: Vec<T>,
    features: Array2<T>,
    label: usize,
}

impl<T: Scalar> Graph<T> {
    /// Builds a graph from an undirected edge list.
    ///
    /// Each `(i, j, w)` contributes `w` to both `A_ij` and `A_ji` (once to
    /// `A_ii` when `i == j`), so listing both directions of the same edge
    /// doubles its weight.
    pub fn build(
        n: usize,
        edges: &[(usize, usize, T)],
        features: Array2<T>,
        label: usize,
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        if features.nrows() != n {
            return Err(GraphError::FeatureRowMismatch { got: features.nrows(), n });
        }
        let mut entries: Vec<(usize, usize, T)> = Vec::with_capacity(edges.len() * 2);
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(GraphError::EdgeOutOfRange { i, j, n });
            }
            if !(w.is_finite() && w >= T::zero()) {
                return Err(GraphError::BadEdgeWeight {
                    i,
                    j,
                    weight: w.to_f64().unwrap_or(f64::NAN),
                });
            }
            entries.push((i, j, w));
            if i != j {
                entries.push((j, i, w));
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));

        let mut rows: Vec<usize> = Vec::with_capacity(entries.len());
        let mut col_idx: Vec<usize> = Vec::with_capacity(entries.len());
        let mut weights: Vec<T> = Vec::with_capacity(entries.len());
        for (i, j, w) in entries {
            if rows.last() == Some(&i) && col_idx.last() == Some(&j) {
                let last = weights.last_mut().expect("parallel to col_idx");
                *last += w;
            } else {
                rows.push(i);
                col_idx.push(j);
                weights.push(w);
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &i in &rows {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }

        let mut inv_sqrt_deg = vec![T::zero(); n];
        for i in 0..n {
            let mut d = T::zero();
            for &w in &weights[row_ptr[i]..row_ptr[i + 1]] {
                d += w;
            }
            if d > T::zero() {
                inv_sqrt_deg[i] = d.sqrt().recip();
            }
        }

        Ok(Self { n, row_ptr, col_idx, weights, inv_sqrt_deg, features, label })
    }

    /// Replaces the feature matrix, keeping adjacency and label.
    pub fn with_features(mut self, features: Array2<T>) -> Result<Self, GraphError> {
        if features.nrows() != self.n {
            return Err(GraphError::FeatureRowMismatch { got: features.nrows(), n: self.n });
        }
        self.features = features;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Number of undirected edges; a self loop counts once.
    pub fn num_edges(&self) -> usize {
        let loops = self.num_self_loops();
        (self.col_idx.len() - loops) / 2 + loops
    }

    fn num_self_loops(&self) -> usize {
        (0..self.n)
            .filter(|&i| self.neighbors(i).any(|(j, _)| j == i))
            .count()
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn feature_width(&self) -> usize {
        self.features.ncols()
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// Sum of incident edge weights; the quantity normalized by `D^{-1/2}`.
    pub fn weighted_degree(&self, i: usize) -> T {
        self.neighbors(i).fold(T::zero(), |acc, (_, w)| acc + w)
    }

    /// Number of distinct neighbors, self loops excluded.
    pub fn neighbor_count(&self, i: usize) -> usize {
        self.neighbors(i).filter(|&(j, _)| j != i).count()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        range.map(move |k| (self.col_idx[k], self.weights[k]))
    }

    /// Computes `L X = X - D^{-1/2} A D^{-1/2} X`.
    pub fn laplacian_matvec(&self, x: &Array2<T>) -> Result<Array2<T>, GraphError> {
        let mut y = self.normalized_adj_matvec(x)?;
        y.zip_mut_with(x, |yv, &xv| *yv = xv - *yv);
        Ok(y)
    }

    /// Computes `(L - I) X = -D^{-1/2} A D^{-1/2} X`.
    ///
    /// The shifted operator has spectrum in `[-1, 1]`, the Chebyshev domain.
    pub fn scaled_laplacian_matvec(&self, x: &Array2<T>) -> Result<Array2<T>, GraphError> {
        let mut y = self.normalized_adj_matvec(x)?;
        y.mapv_inplace(|v| -v);
        Ok(y)
    }

    /// `D^{-1/2} A D^{-1/2} X` via one CSR sweep.
    fn normalized_adj_matvec(&self, x: &Array2<T>) -> Result<Array2<T>, GraphError> {
        if x.nrows() != self.n {
            return Err(GraphError::SignalRowMismatch { got: x.nrows(), expected: self.n });
        }
        let c = x.ncols();
        let mut y = Array2::<T>::zeros((self.n, c));
        let x_std;
        let xs: &[T] = match x.as_slice() {
            Some(s) => s,
            None => {
                x_std = x.as_standard_layout().into_owned();
                x_std.as_slice().expect("standard layout")
            }
        };
        let ys = y.as_slice_mut().expect("freshly allocated");
        for i in 0..self.n {
            let si = self.inv_sqrt_deg[i];
            if si == T::zero() {
                continue;
            }
            let yrow = &mut ys[i * c..(i + 1) * c];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let wij = si * self.weights[k] * self.inv_sqrt_deg[j];
                if wij == T::zero() {
                    continue;
                }
                let xrow = &xs[j * c..(j + 1) * c];
                for (yv, &xv) in yrow.iter_mut().zip(xrow) {
                    *yv += wij * xv;
                }
            }
        }
        Ok(y)
    }

    /// Dense `L = I - D^{-1/2} A D^{-1/2}`; diagnostic only, `O(n^2)` memory.
    pub fn dense_laplacian(&self) -> Array2<T> {
        let mut l = Array2::<T>::eye(self.n);
        for i in 0..self.n {
            let si = self.inv_sqrt_deg[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                l[[i, j]] -= si * self.weights[k] * self.inv_sqrt_deg[j];
            }
        }
        l
    }

    /// Relabels nodes: node `m` of the result is node `perm[m]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self, GraphError> {
        if perm.len() != self.n {
            return Err(GraphError::BadPermutation { got: perm.len(), n: self.n });
        }
        let mut seen = vec![false; self.n];
        for &p in perm {
            if p >= self.n || seen[p] {
                return Err(GraphError::BadPermutation { got: perm.len(), n: self.n });
            }
            seen[p] = true;
        }
        let mut inv = vec![0usize; self.n];
        for (m, &p) in perm.iter().enumerate() {
            inv[p] = m;
        }
        // Collect each undirected edge once (j <= i) with its coalesced weight.
        let mut edges = Vec::with_capacity(self.col_idx.len() / 2 + 1);
        for i in 0..self.n {
            for (j, w) in self.neighbors(i) {
                if j <= i {
                    edges.push((inv[i], inv[j], w));
                }
            }
        }
        let mut features = Array2::<T>::zeros((self.n, self.features.ncols()));
        for (m, &src) in perm.iter().enumerate() {
            features.row_mut(m).assign(&self.features.row(src));
        }
        Self::build(self.n, &edges, features, self.label)
    }
}

/// Disjoint union of graphs with per-node origin bookkeeping.
///
/// The merged adjacency is block diagonal, so every Laplacian product on the
/// batch equals the per-graph products stacked in order.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    merged: Graph<T>,
    graph_of_node: Vec<usize>,
    node_offsets: Vec<usize>,
    labels: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_graphs<'a, I>(graphs: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = &'a Graph<T>>,
        T: 'a,
    {
        let graphs: Vec<&Graph<T>> = graphs.into_iter().collect();
        if graphs.is_empty() {
            return Err(GraphError::EmptyBatch);
        }
        let width = graphs[0].feature_width();
        let mut node_offsets = Vec::with_capacity(graphs.len() + 1);
        node_offsets.push(0);
        for g in &graphs {
            if g.feature_width() != width {
                return Err(GraphError::MixedFeatureWidth { a: width, b: g.feature_width() });
            }
            node_offsets.push(node_offsets.last().unwrap() + g.num_nodes());
        }
        let total = *node_offsets.last().unwrap();

        let mut edges = Vec::new();
        let mut features = Array2::<T>::zeros((total, width));
        let mut graph_of_node = Vec::with_capacity(total);
        let mut labels = Vec::with_capacity(graphs.len());
        for (gi, g) in graphs.iter().enumerate() {
            let off = node_offsets[gi];
            for i in 0..g.num_nodes() {
                for (j, w) in g.neighbors(i) {
                    if j <= i {
                        edges.push((off + i, off + j, w));
                    }
                }
                graph_of_node.push(gi);
            }
            features
                .slice_mut(ndarray::s![off..off + g.num_nodes(), ..])
                .assign(g.features());
            labels.push(g.label());
        }
        let merged = Graph::build(total, &edges, features, 0)?;
        Ok(Self { merged, graph_of_node, node_offsets, labels })
    }

    pub fn merged(&self) -> &Graph<T> {
        &self.merged
    }

    pub fn num_graphs(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn graph_of_node(&self) -> &[usize] {
        &self.graph_of_node
    }

    /// Node index range of graph `g` inside the merged node set.
    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        self.node_offsets[g]..self.node_offsets[g + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path2() -> Graph<f64> {
        Graph::build(2, &[(0, 1, 1.0)], array![[1.0], [0.0]], 0).unwrap()
    }

    #[test]
    fn single_edge_is_symmetrized() {
        let g = path2();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(0).collect::<Vec<_>>(), vec![(1, 1.0)]);
        assert_eq!(g.neighbors(1).collect::<Vec<_>>(), vec![(0, 1.0)]);
        assert_eq!(g.weighted_degree(0), 1.0);
    }

    #[test]
    fn duplicate_directions_coalesce_by_summing() {
        let g = Graph::build(3, &[(0, 1, 1.0), (1, 0, 1.0)], Array2::zeros((3, 1)), 0).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(0).collect::<Vec<_>>(), vec![(1, 2.0)]);
        assert_eq!(g.weighted_degree(1), 2.0);
    }

    #[test]
    fn isolated_node_has_zero_inverse_degree() {
        let g = Graph::build(3, &[(0, 1, 1.0)], Array2::zeros((3, 1)), 0).unwrap();
        assert_eq!(g.weighted_degree(2), 0.0);
        assert_eq!(g.inv_sqrt_deg[2], 0.0);
    }

    #[test]
    fn self_loop_kept_once() {
        let g: Graph<f64> =
            Graph::build(2, &[(0, 0, 2.0), (0, 1, 1.0)], Array2::zeros((2, 1)), 0).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.weighted_degree(0), 3.0);
        assert!((g.dense_laplacian()[[0, 0]] - (1.0 - 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn build_rejects_bad_input() {
        let feats = Array2::<f64>::zeros((2, 1));
        assert!(matches!(
            Graph::build(2, &[(0, 5, 1.0)], feats.clone(), 0),
            Err(GraphError::EdgeOutOfRange { .. })
        ));
        assert!(matches!(
            Graph::build(2, &[(0, 1, -1.0)], feats.clone(), 0),
            Err(GraphError::BadEdgeWeight { .. })
        ));
        assert!(matches!(
            Graph::build(2, &[(0, 1, f64::NAN)], feats.clone(), 0),
            Err(GraphError::BadEdgeWeight { .. })
        ));
        assert!(matches!(
            Graph::<f64>::build(0, &[], Array2::zeros((0, 1)), 0),
            Err(GraphError::EmptyGraph)
        ));
        assert!(matches!(
            Graph::build(3, &[], feats, 0),
            Err(GraphError::FeatureRowMismatch { .. })
        ));
    }

    #[test]
    fn laplacian_on_two_path() {
        let g = path2();
        let y = g.laplacian_matvec(&array![[1.0], [0.0]]).unwrap();
        assert_eq!(y, array![[1.0], [-1.0]]);
        let z = g.scaled_laplacian_matvec(&array![[1.0], [0.0]]).unwrap();
        assert_eq!(z, array![[0.0], [-1.0]]);
    }

    #[test]
    fn isolated_node_passes_through() {
        let g = Graph::build(3, &[(0, 1, 1.0)], Array2::zeros((3, 1)), 0).unwrap();
        let y = g.laplacian_matvec(&array![[1.0], [1.0], [5.0]]).unwrap();
        assert_eq!(y[[2, 0]], 5.0);
        let z = g.scaled_laplacian_matvec(&array![[0.0], [0.0], [5.0]]).unwrap();
        assert_eq!(z[[2, 0]], 0.0);
    }

    #[test]
    fn matvec_rejects_wrong_rows() {
        let g = path2();
        assert!(matches!(
            g.laplacian_matvec(&Array2::zeros((3, 1))),
            Err(GraphError::SignalRowMismatch { .. })
        ));
    }

    #[test]
    fn permute_two_path_swaps_rows() {
        let g = path2();
        let p = g.permute(&[1, 0]).unwrap();
        assert_eq!(p.features(), &array![[0.0], [1.0]]);
        assert_eq!(p.neighbors(0).collect::<Vec<_>>(), vec![(1, 1.0)]);
    }

    #[test]
    fn permute_identity_is_noop() {
        let g = Graph::build(
            4,
            &[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 1.0)],
            Array2::zeros((4, 2)),
            1,
        )
        .unwrap();
        let p = g.permute(&[0, 1, 2, 3]).unwrap();
        assert_eq!(p.dense_laplacian(), g.dense_laplacian());
        assert_eq!(p.label(), 1);
    }

    #[test]
    fn permute_rejects_non_bijection() {
        let g = path2();
        assert!(matches!(g.permute(&[0, 0]), Err(GraphError::BadPermutation { .. })));
        assert!(matches!(g.permute(&[0]), Err(GraphError::BadPermutation { .. })));
    }

    #[test]
    fn batch_of_two_paths_is_block_diagonal() {
        let g = path2();
        let b = Batch::from_graphs([&g, &g]).unwrap();
        assert_eq!(b.merged().num_nodes(), 4);
        assert_eq!(b.merged().num_edges(), 2);
        assert_eq!(b.graph_of_node(), &[0, 0, 1, 1]);
        assert_eq!(b.node_range(1), 2..4);
        assert!(b.merged().neighbors(1).all(|(j, _)| j < 2));
    }

    #[test]
    fn batch_rejects_mixed_widths_and_empty() {
        let g = path2();
        let h = Graph::build(2, &[(0, 1, 1.0)], Array2::zeros((2, 3)), 0).unwrap();
        assert!(matches!(
            Batch::from_graphs([&g, &h]),
            Err(GraphError::MixedFeatureWidth { .. })
        ));
        assert!(matches!(
            Batch::from_graphs(std::iter::empty::<&Graph<f64>>()),
            Err(GraphError::EmptyBatch)
        ));
    }

    #[test]
    fn single_node_batch() {
        let g = Graph::<f64>::build(1, &[], Array2::zeros((1, 2)), 0).unwrap();
        let b = Batch::from_graphs([&g]).unwrap();
        assert_eq!(b.merged().num_nodes(), 1);
        assert_eq!(b.merged().num_edges(), 0);
    }
}
