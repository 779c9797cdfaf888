//! Communication graphs, their weighted Laplacians and the consensus projectors.
//!
//! Stacked vectors are laid out agent-major: block `i` occupies
//! `v[i * dim .. (i + 1) * dim]`. Nothing here materializes a Kronecker product;
//! `L ⊗ I` is applied through neighbor lists, the same way each agent would
//! compute its local disagreement term.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{GneError, Result};
use crate::Vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Hub is node 0, every other node is a leaf.
    Star,
    Ring,
    Path,
    Complete,
    /// Explicit undirected edges, 0-based.
    EdgeList(Vec<(usize, usize)>),
}

/// Undirected, connected, positively weighted graph without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    node_count: usize,
    edges: Vec<(usize, usize, f64)>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl CommGraph {
    /// Builds a graph from explicit 0-based edges. `weights` (one per edge) default to 1.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)], weights: Option<&[f64]>) -> Result<Self> {
        if node_count < 2 {
            return Err(GneError::domain(format!(
                "graph needs at least 2 nodes, got {node_count}"
            )));
        }
        if let Some(w) = weights {
            if w.len() != edges.len() {
                return Err(GneError::domain(format!(
                    "{} weights given for {} edges",
                    w.len(),
                    edges.len()
                )));
            }
        }
        let mut seen = BTreeSet::new();
        let mut weighted = Vec::with_capacity(edges.len());
        let mut neighbors = vec![Vec::new(); node_count];
        for (e, &(a, b)) in edges.iter().enumerate() {
            if a >= node_count || b >= node_count {
                return Err(GneError::domain(format!(
                    "edge ({a}, {b}) references a node outside 0..{node_count}"
                )));
            }
            if a == b {
                return Err(GneError::domain(format!("self-loop at node {a}")));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(GneError::domain(format!("duplicate edge ({a}, {b})")));
            }
            let w = weights.map_or(1.0, |w| w[e]);
            if !(w.is_finite() && w > 0.0) {
                return Err(GneError::domain(format!("edge ({a}, {b}) has non-positive weight {w}")));
            }
            weighted.push((key.0, key.1, w));
            neighbors[a].push((b, w));
            neighbors[b].push((a, w));
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(j, _)| j);
        }
        let graph = CommGraph {
            node_count,
            edges: weighted,
            neighbors,
        };
        graph.check_connected()?;
        Ok(graph)
    }

    fn check_connected(&self) -> Result<()> {
        let mut visited = vec![false; self.node_count];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &self.neighbors[i] {
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match visited.iter().position(|v| !v) {
            None => Ok(()),
            Some(i) => Err(GneError::Connectivity(format!("node {i} is unreachable from node 0"))),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Edges as `(i, j, w_ij)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Weighted degree `d_i = Σ_j w_ij`.
    pub fn degree(&self, i: usize) -> f64 {
        self.neighbors[i].iter().map(|&(_, w)| w).sum()
    }

    /// `d* = max_i d_i`.
    pub fn max_degree(&self) -> f64 {
        (0..self.node_count).map(|i| self.degree(i)).fold(0.0, f64::max)
    }
}

/// Builds one of the standard topologies (or an explicit edge list).
pub fn build_graph(topology: &Topology, n: usize, weights: Option<&[f64]>) -> Result<CommGraph> {
    if n < 2 {
        return Err(GneError::domain(format!("graph needs at least 2 nodes, got {n}")));
    }
    let edges: Vec<(usize, usize)> = match topology {
        Topology::Star => (1..n).map(|j| (0, j)).collect(),
        // A 2-node "ring" is a single edge.
        Topology::Ring if n == 2 => vec![(0, 1)],
        Topology::Ring => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        Topology::Path => (0..n - 1).map(|i| (i, i + 1)).collect(),
        Topology::Complete => (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
        Topology::EdgeList(list) => list.clone(),
    };
    CommGraph::from_edges(n, &edges, weights)
}

/// Weighted Laplacian `L = Deg − W` with cached extreme nonzero eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    graph: CommGraph,
    matrix: DMatrix<f64>,
    lambda2: f64,
    lambda_max: f64,
}

impl Laplacian {
    pub fn new(graph: &CommGraph) -> Self {
        let n = graph.node_count();
        let mut matrix = DMatrix::zeros(n, n);
        for &(i, j, w) in graph.edges() {
            matrix[(i, j)] -= w;
            matrix[(j, i)] -= w;
            matrix[(i, i)] += w;
            matrix[(j, j)] += w;
        }
        let mut eig: Vec<f64> = SymmetricEigen::new(matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eig.sort_by(f64::total_cmp);
        Laplacian {
            graph: graph.clone(),
            matrix,
            lambda2: eig[1],
            lambda_max: eig[n - 1],
        }
    }

    pub fn graph(&self) -> &CommGraph {
        &self.graph
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Algebraic connectivity λ₂(L).
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Largest eigenvalue λ_N(L).
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `(L ⊗ I_dim) v` for a stacked vector of `node_count` blocks.
    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        let dim = block_dim(v.len(), self.node_count())?;
        let mut out = Vector::zeros(v.len());
        self.apply_into(v.as_slice(), dim, out.as_mut_slice());
        Ok(out)
    }

    /// Block `i` of `(L ⊗ I_dim) v`, i.e. `Σ_j w_ij (v_i − v_j)`, written to `out`.
    pub fn apply_block(&self, v: &[f64], dim: usize, i: usize, out: &mut [f64]) {
        out.fill(0.0);
        let vi = &v[i * dim..(i + 1) * dim];
        for &(j, w) in self.graph.neighbors(i) {
            let vj = &v[j * dim..(j + 1) * dim];
            for k in 0..dim {
                out[k] += w * (vi[k] - vj[k]);
            }
        }
    }

    pub(crate) fn apply_into(&self, v: &[f64], dim: usize, out: &mut [f64]) {
        for i in 0..self.node_count() {
            self.apply_block(v, dim, i, &mut out[i * dim..(i + 1) * dim]);
        }
    }
}

/// Builds the Laplacian of a standard topology in one go.
pub fn laplacian(graph: &CommGraph) -> Laplacian {
    Laplacian::new(graph)
}

pub(crate) fn block_dim(len: usize, blocks: usize) -> Result<usize> {
    if blocks == 0 || !len.is_multiple_of(blocks) || len == 0 {
        return Err(GneError::domain(format!(
            "vector of length {len} is not a stack of {blocks} equal blocks"
        )));
    }
    Ok(len / blocks)
}

/// Block average `σ(v) = (1/N) Σ_i v_i`.
pub fn block_mean(v: &[f64], blocks: usize) -> Result<Vec<f64>> {
    let dim = block_dim(v.len(), blocks)?;
    let mut mean = vec![0.0; dim];
    for block in v.chunks_exact(dim) {
        for (m, x) in mean.iter_mut().zip(block) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= blocks as f64;
    }
    Ok(mean)
}

/// `P_∥ v = 1_N ⊗ σ(v)`.
pub fn project_parallel(v: &Vector, blocks: usize) -> Result<Vector> {
    let mean = block_mean(v.as_slice(), blocks)?;
    Ok(Vector::from_iterator(
        v.len(),
        (0..blocks).flat_map(|_| mean.iter().copied()),
    ))
}

/// `P_⊥ v = v − P_∥ v`.
pub fn project_perp(v: &Vector, blocks: usize) -> Result<Vector> {
    Ok(v - project_parallel(v, blocks)?)
}
