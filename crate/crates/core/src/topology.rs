//! Communication graphs and their doubly stochastic mixing weights.
//!
//! A topology is a directed graph over client ids 0..n with a self-loop at
//! every node. Strong connectivity is checked at construction, so any
//! `Digraph` handed to the protocol layer is already usable for consensus.

use crate::numerics::DenseMatrix;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology needs at least {min} nodes, got {got}")]
    TooFewNodes { min: usize, got: usize },
    #[error("edge ({from}, {to}) out of range for {n} nodes")]
    EdgeOutOfRange { from: usize, to: usize, n: usize },
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("sinkhorn balancing did not reach tolerance {tol} within {max_iter} iterations (residual {residual})")]
    SinkhornDiverged {
        tol: f64,
        max_iter: usize,
        residual: f64,
    },
    #[error("invalid edge list file: {0}")]
    InvalidEdgeList(String),
}

/// Built-in graph shapes plus an escape hatch for explicit edge lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyKind {
    /// Every ordered pair is an edge.
    Full,
    /// Directed cycle i -> i+1 (mod n).
    Ring,
    /// Explicit directed edges; self-loops are implied and may be omitted.
    Custom { edges: Vec<(usize, usize)> },
}

/// Directed communication graph with mandatory self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    n: usize,
    out_neighbors: Vec<Vec<usize>>,
    in_neighbors: Vec<Vec<usize>>,
}

impl Digraph {
    /// Builds from explicit directed edges (from, to). Self-loops are added
    /// for every node whether listed or not.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::TooFewNodes { min: 1, got: 0 });
        }
        let mut out: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut inn: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(from, to) in edges {
            if from >= n || to >= n {
                return Err(TopologyError::EdgeOutOfRange { from, to, n });
            }
            if !out[from].contains(&to) {
                out[from].push(to);
                inn[to].push(from);
            }
        }
        for list in out.iter_mut().chain(inn.iter_mut()) {
            list.sort_unstable();
        }
        let g = Self {
            n,
            out_neighbors: out,
            in_neighbors: inn,
        };
        if !g.strongly_connected_impl() {
            return Err(TopologyError::NotStronglyConnected);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_neighbors[i]
    }

    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.out_neighbors[from].binary_search(&to).is_ok()
    }

    /// Directed non-self edges, in (from, to) lexicographic order.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (from, outs) in self.out_neighbors.iter().enumerate() {
            for &to in outs {
                if to != from {
                    edges.push((from, to));
                }
            }
        }
        edges
    }

    fn reach_count(&self, start: usize, forward: bool) -> usize {
        let mut seen = vec![false; self.n];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            let nbrs = if forward {
                &self.out_neighbors[v]
            } else {
                &self.in_neighbors[v]
            };
            for &u in nbrs {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count
    }

    fn strongly_connected_impl(&self) -> bool {
        self.reach_count(0, true) == self.n && self.reach_count(0, false) == self.n
    }
}

/// True iff every node reaches every other along directed edges.
pub fn is_strongly_connected(g: &Digraph) -> bool {
    g.strongly_connected_impl()
}

/// Constructs one of the named topologies over n nodes.
pub fn build_topology(kind: &TopologyKind, n: usize) -> Result<Digraph, TopologyError> {
    match kind {
        TopologyKind::Full => {
            if n < 2 {
                return Err(TopologyError::TooFewNodes { min: 2, got: n });
            }
            let mut edges = Vec::with_capacity(n * (n - 1));
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        edges.push((i, j));
                    }
                }
            }
            Digraph::new(n, &edges)
        }
        TopologyKind::Ring => {
            if n < 2 {
                return Err(TopologyError::TooFewNodes { min: 2, got: n });
            }
            let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
            Digraph::new(n, &edges)
        }
        TopologyKind::Custom { edges } => Digraph::new(n, edges),
    }
}

#[derive(Deserialize)]
struct EdgeListFile {
    n: usize,
    edges: Vec<(usize, usize)>,
}

/// Parses a JSON edge list of the form {"n": 3, "edges": [[0,1],[1,2],[2,0]]}.
pub fn parse_edge_list(json: &str) -> Result<Digraph, TopologyError> {
    let file: EdgeListFile =
        serde_json::from_str(json).map_err(|e| TopologyError::InvalidEdgeList(e.to_string()))?;
    Digraph::new(file.n, &file.edges)
}

/// Doubly stochastic mixing weights over a digraph. Row i holds the weights
/// node i assigns to messages from its in-neighbors: w[(i, j)] > 0 exactly
/// when the graph has edge j -> i.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: DenseMatrix,
}

impl WeightMatrix {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.w.n_rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn max_row_residual(&self) -> f64 {
        self.w
            .row_sums()
            .iter()
            .fold(0.0, |m, s| m.max((s - 1.0).abs()))
    }

    pub fn max_col_residual(&self) -> f64 {
        self.w
            .col_sums()
            .iter()
            .fold(0.0, |m, s| m.max((s - 1.0).abs()))
    }
}

pub const SINKHORN_TOL: f64 = 1e-10;
pub const SINKHORN_MAX_ITER: usize = 10_000;

/// Sinkhorn-Knopp balancing of the graph's 0/1 adjacency (with self-loops)
/// into a doubly stochastic matrix. Alternates row and column normalization;
/// zero entries stay exactly zero, so the support always matches the graph.
pub fn sinkhorn_knopp(
    g: &Digraph,
    tol: f64,
    max_iter: usize,
) -> Result<WeightMatrix, TopologyError> {
    let n = g.n();
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for &j in g.in_neighbors(i) {
            w[(i, j)] = 1.0;
        }
    }
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        for i in 0..n {
            let s: f64 = w.row(i).iter().sum();
            for j in 0..n {
                w[(i, j)] /= s;
            }
        }
        for (j, s) in w.col_sums().into_iter().enumerate() {
            for i in 0..n {
                w[(i, j)] /= s;
            }
        }
        let row_res = w
            .row_sums()
            .iter()
            .fold(0.0_f64, |m, s| m.max((s - 1.0).abs()));
        let col_res = w
            .col_sums()
            .iter()
            .fold(0.0_f64, |m, s| m.max((s - 1.0).abs()));
        residual = row_res.max(col_res);
        if residual <= tol {
            return Ok(WeightMatrix { w });
        }
    }
    Err(TopologyError::SinkhornDiverged {
        tol,
        max_iter,
        residual,
    })
}
