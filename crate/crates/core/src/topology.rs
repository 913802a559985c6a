//! Communication topologies for leader-follower formations.
//!
//! Followers are numbered `1..=n` and the leader is node `0`. The leader is
//! not part of the Laplacian: its error is identically zero, so its links
//! only show up on the diagonal of the follower rows.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How followers with index `i <= r` treat predecessors that do not exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryConvention {
    /// Missing predecessors are identified with the leader, so every row has degree `r`.
    #[default]
    LeaderPadded,
    /// Follower `i` only uses its `min(i, r)` existing predecessors.
    Truncated,
}

impl fmt::Display for BoundaryConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryConvention::LeaderPadded => "leader_padded",
            BoundaryConvention::Truncated => "truncated",
        })
    }
}

impl FromStr for BoundaryConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "leader_padded" | "padded" => Ok(BoundaryConvention::LeaderPadded),
            "truncated" => Ok(BoundaryConvention::Truncated),
            other => Err(Error::domain(format!("unknown boundary convention `{other}`"))),
        }
    }
}

/// A directed graph where an edge `(from, to)` means `to` receives information from `from`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl DirectedGraph {
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::domain("graph needs at least one node"));
        }
        let mut set = BTreeSet::new();
        for (from, to) in edges {
            if from >= n_nodes || to >= n_nodes {
                return Err(Error::domain(format!(
                    "edge ({from}, {to}) out of range for {n_nodes} nodes"
                )));
            }
            if from == to {
                return Err(Error::domain(format!("self-loop at node {from}")));
            }
            set.insert((from, to));
        }
        Ok(DirectedGraph {
            n_nodes,
            edges: set,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    fn successors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_nodes];
        for &(from, to) in &self.edges {
            out[from].push(to);
        }
        out
    }

    fn reach_count(succ: &[Vec<usize>], root: usize) -> usize {
        let mut seen = vec![false; succ.len()];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &succ[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count
    }

    /// Returns the first node that reaches every other node, if any.
    pub fn spanning_tree_root(&self) -> Option<usize> {
        let succ = self.successors();
        (0..self.n_nodes).find(|&root| Self::reach_count(&succ, root) == self.n_nodes)
    }
}

/// True iff some node reaches every node along information-flow edges.
pub fn has_spanning_tree(g: &DirectedGraph) -> bool {
    g.spanning_tree_root().is_some()
}

/// Follower topology with the leader folded into the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    r: usize,
    convention: BoundaryConvention,
    laplacian: DMatrix<f64>,
    degrees: Vec<usize>,
}

/// Builds the r-predecessor topology: follower `i` listens to `i-1, ..., i-r`.
pub fn build_r_predecessor(n: usize, r: usize, convention: BoundaryConvention) -> Result<Topology> {
    if n == 0 {
        return Err(Error::domain("follower count n must be at least 1"));
    }
    if r == 0 {
        return Err(Error::domain("richness r must be at least 1"));
    }
    let mut laplacian = DMatrix::zeros(n, n);
    let mut degrees = Vec::with_capacity(n);
    for row in 0..n {
        let follower = row + 1;
        let degree = match convention {
            BoundaryConvention::LeaderPadded => r,
            BoundaryConvention::Truncated => follower.min(r),
        };
        laplacian[(row, row)] = degree as f64;
        degrees.push(degree);
        // predecessors that are followers; the rest are the leader
        for j in 1..=r.min(follower - 1) {
            laplacian[(row, row - j)] = -1.0;
        }
    }
    Ok(Topology {
        n,
        r,
        convention,
        laplacian,
        degrees,
    })
}

impl Topology {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn convention(&self) -> BoundaryConvention {
        self.convention
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Number of links from follower `i` (1-based) to the leader, i.e. its row sum.
    pub fn leader_links(&self, i: usize) -> usize {
        let row = i - 1;
        let followers = (0..row).filter(|&c| self.laplacian[(row, c)] != 0.0).count();
        self.degrees[row] - followers
    }

    /// Follower predecessors of row `row` (0-based) as 0-based row indices.
    pub(crate) fn follower_predecessors(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        (0..row).filter(move |&c| self.laplacian[(row, c)] != 0.0)
    }

    /// The information-flow graph with the leader as node 0.
    pub fn to_graph(&self) -> DirectedGraph {
        let mut edges = Vec::new();
        for row in 0..self.n {
            let follower = row + 1;
            if self.leader_links(follower) > 0 {
                edges.push((0, follower));
            }
            edges.extend(self.follower_predecessors(row).map(|c| (c + 1, follower)));
        }
        DirectedGraph::new(self.n + 1, edges).expect("topology edges are well formed")
    }

    /// Rows of the Laplacian as nested vectors, convenient for serialization.
    pub fn laplacian_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| self.laplacian.row(i).iter().copied().collect())
            .collect()
    }

    /// Laplacian as CSV: one line per row, no header.
    pub fn laplacian_csv(&self) -> String {
        let mut out = String::new();
        for row in self.laplacian_rows() {
            let cells: Vec<String> = row.iter().map(|v| fmt_number(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn fmt_number(v: f64) -> String {
    if v == 0.0 {
        // avoid "-0"
        "0".to_string()
    } else {
        format!("{v}")
    }
}

/// Exact spectrum of a triangular Laplacian: its diagonal.
pub fn laplacian_eigenvalues_triangular(t: &Topology) -> Vec<f64> {
    t.laplacian.diagonal().iter().copied().collect()
}
