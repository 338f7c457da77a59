//! Attributed undirected graphs, structural-bias metrics and the normalized
//! propagation operators used by message passing.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected attributed graph with sensitive and (optionally) utility labels.
///
/// Adjacency is kept in CSR form with every undirected edge stored in both
/// directions, neighbor lists sorted, no self-loops and no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Array2<f64>,
    sensitive: Vec<usize>,
    utility: Option<Vec<usize>>,
}

impl LabeledGraph {
    /// Builds a graph from an undirected edge list. Each pair may appear in
    /// either or both orientations; repeated pairs collapse to one edge.
    pub fn new(
        node_count: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
        sensitive: Vec<usize>,
        utility: Option<Vec<usize>>,
    ) -> Result<Self> {
        if features.nrows() != node_count {
            return Err(Error::dim(format!(
                "feature rows {} != node count {}",
                features.nrows(),
                node_count
            )));
        }
        if sensitive.len() != node_count {
            return Err(Error::dim(format!(
                "sensitive labels {} != node count {}",
                sensitive.len(),
                node_count
            )));
        }
        if let Some(u) = &utility {
            if u.len() != node_count {
                return Err(Error::dim(format!(
                    "utility labels {} != node count {}",
                    u.len(),
                    node_count
                )));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features".into()));
        }

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); node_count];
        for &(a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::invalid(format!(
                    "edge ({a},{b}) references a node outside 0..{node_count}"
                )));
            }
            if a == b {
                return Err(Error::invalid(format!("self-loop on node {a}")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut offsets = Vec::with_capacity(node_count + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }

        Ok(Self {
            offsets,
            neighbors,
            features,
            sensitive,
            utility,
        })
    }

    pub fn node_count(&self) -> usize {
        self.sensitive.len()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count()).map(|v| self.degree(v)).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for u in 0..self.node_count() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn sensitive_labels(&self) -> &[usize] {
        &self.sensitive
    }

    pub fn utility_labels(&self) -> Option<&[usize]> {
        self.utility.as_deref()
    }

    pub fn sensitive_classes(&self) -> usize {
        class_count(&self.sensitive)
    }

    pub fn utility_classes(&self) -> Option<usize> {
        self.utility.as_deref().map(class_count)
    }

    /// Dense 0/1 adjacency matrix.
    pub fn dense_adjacency(&self) -> Array2<f64> {
        let n = self.node_count();
        let mut a = Array2::zeros((n, n));
        for u in 0..n {
            for &v in self.neighbors(u) {
                a[[u, v]] = 1.0;
            }
        }
        a
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count();
        if perm.len() != n {
            return Err(Error::dim("permutation length differs from node count"));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(Error::invalid("not a permutation"));
            }
            seen[p] = true;
        }
        let edges: Vec<_> = self.edges().into_iter().map(|(a, b)| (perm[a], perm[b])).collect();
        let mut features = Array2::zeros(self.features.raw_dim());
        let mut sensitive = vec![0; n];
        let mut utility = self.utility.as_ref().map(|_| vec![0; n]);
        for v in 0..n {
            features.row_mut(perm[v]).assign(&self.features.row(v));
            sensitive[perm[v]] = self.sensitive[v];
            if let (Some(dst), Some(src)) = (utility.as_mut(), self.utility.as_ref()) {
                dst[perm[v]] = src[v];
            }
        }
        Self::new(n, &edges, features, sensitive, utility)
    }
}

fn class_count(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |m| m + 1)
}

/// Structural bias: mean over non-isolated nodes of
/// `|same − different| / |N_v|`. With `weights`, neighbor counts become weight
/// sums over the off-diagonal entries of row `v`.
pub fn structural_bias(graph: &LabeledGraph, labels: &[usize], weights: Option<ArrayView2<'_, f64>>) -> Result<f64> {
    let n = graph.node_count();
    if labels.len() != n {
        return Err(Error::dim(format!("labels {} != node count {n}", labels.len())));
    }
    match weights {
        None => {
            let mut total = 0.0;
            let mut counted = 0usize;
            for v in 0..n {
                let nbrs = graph.neighbors(v);
                if nbrs.is_empty() {
                    continue;
                }
                let same = nbrs.iter().filter(|&&u| labels[u] == labels[v]).count() as f64;
                let diff = nbrs.len() as f64 - same;
                total += (same - diff).abs() / nbrs.len() as f64;
                counted += 1;
            }
            if counted == 0 {
                return Err(Error::EdgelessGraph);
            }
            Ok(total / counted as f64)
        }
        Some(w) => weighted_structural_bias(w, labels),
    }
}

/// Weighted structural bias on a dense symmetric non-negative matrix; the
/// diagonal is ignored.
pub fn weighted_structural_bias(weights: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let n = labels.len();
    if weights.dim() != (n, n) {
        return Err(Error::dim(format!(
            "weights {:?} do not match {n} labels",
            weights.dim()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let w = weights[[i, j]];
            if !(w >= 0.0) {
                return Err(Error::invalid(format!("negative or NaN weight at ({i},{j})")));
            }
            if j > i {
                let wt = weights[[j, i]];
                if (w - wt).abs() > 1e-9 * (1.0 + w.abs().max(wt.abs())) {
                    return Err(Error::invalid(format!("weights not symmetric at ({i},{j})")));
                }
            }
        }
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for v in 0..n {
        let mut same = 0.0;
        let mut diff = 0.0;
        for u in 0..n {
            if u == v {
                continue;
            }
            if labels[u] == labels[v] {
                same += weights[[v, u]];
            } else {
                diff += weights[[v, u]];
            }
        }
        let sum = same + diff;
        if sum > 0.0 {
            total += (same - diff).abs() / sum;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::EdgelessGraph);
    }
    Ok(total / counted as f64)
}

/// Structural bias of a (possibly asymmetric) learned adjacency, computed on
/// its symmetrization `(W + Wᵀ)/2`.
pub fn learned_structural_bias(adjacency: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let sym = (&adjacency + &adjacency.t()) * 0.5;
    weighted_structural_bias(sym.view(), labels)
}

/// Counts undirected intra-links (equal labels) and inter-links.
pub fn intra_inter_counts(graph: &LabeledGraph, labels: &[usize]) -> Result<(usize, usize)> {
    if labels.len() != graph.node_count() {
        return Err(Error::dim("labels length differs from node count"));
    }
    let (mut intra, mut inter) = (0, 0);
    for (u, v) in graph.edges() {
        if labels[u] == labels[v] {
            intra += 1;
        } else {
            inter += 1;
        }
    }
    Ok((intra, inter))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationKind {
    /// Coefficients `1/|N_u|` on the diagonal and `1/√(|N_u||N_v|)` per edge.
    SymmetricSelfLoop,
    /// `D⁻¹A`; isolated nodes keep a unit self-loop.
    LeftStochastic,
}

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows(), self.n_cols));
        for r in 0..self.n_rows() {
            for (c, v) in self.row(r) {
                out[[r, c]] += v;
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn mul_dense(&self, rhs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rhs.nrows() != self.n_cols {
            return Err(Error::dim(format!(
                "operator is {}x{}, right-hand side has {} rows",
                self.n_rows(),
                self.n_cols,
                rhs.nrows()
            )));
        }
        let mut out = Array2::zeros((self.n_rows(), rhs.ncols()));
        for r in 0..self.n_rows() {
            let mut dst = out.row_mut(r);
            for (c, v) in self.row(r) {
                dst.scaled_add(v, &rhs.row(c));
            }
        }
        Ok(out)
    }
}

/// A normalized adjacency operator together with the raw degree vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedOperator {
    pub kind: NormalizationKind,
    pub matrix: SparseMatrix,
    pub degrees: Vec<usize>,
}

pub fn normalize(graph: &LabeledGraph, kind: NormalizationKind) -> NormalizedOperator {
    let n = graph.node_count();
    let degrees = graph.degrees();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    offsets.push(0);
    for u in 0..n {
        let du = degrees[u];
        if du == 0 {
            indices.push(u);
            values.push(1.0);
        } else {
            match kind {
                NormalizationKind::SymmetricSelfLoop => {
                    // self entry sits in sorted position among the neighbors
                    let nbrs = graph.neighbors(u);
                    let split = nbrs.partition_point(|&v| v < u);
                    let coeff = |v: usize| 1.0 / ((du * degrees[v]) as f64).sqrt();
                    for &v in &nbrs[..split] {
                        indices.push(v);
                        values.push(coeff(v));
                    }
                    indices.push(u);
                    values.push(1.0 / du as f64);
                    for &v in &nbrs[split..] {
                        indices.push(v);
                        values.push(coeff(v));
                    }
                }
                NormalizationKind::LeftStochastic => {
                    let w = 1.0 / du as f64;
                    for &v in graph.neighbors(u) {
                        indices.push(v);
                        values.push(w);
                    }
                }
            }
        }
        offsets.push(indices.len());
    }
    NormalizedOperator {
        kind,
        matrix: SparseMatrix {
            n_cols: n,
            offsets,
            indices,
            values,
        },
        degrees,
    }
}

/// Message passing `Z = Ã·X`.
pub fn propagate(op: &NormalizedOperator, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    op.matrix.mul_dense(x)
}
