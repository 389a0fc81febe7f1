//! Undirected relational graph over vertices.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertex count plus a set of undirected edges without self-loops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct RelationalGraph {
    num_vertices: usize,
    edges: BTreeSet<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    num_vertices: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<RawGraph> for RelationalGraph {
    type Error = Error;
    fn try_from(raw: RawGraph) -> Result<Self> {
        RelationalGraph::new(raw.num_vertices, raw.edges.iter().map(|e| (e[0], e[1])))
    }
}

impl From<RelationalGraph> for RawGraph {
    fn from(g: RelationalGraph) -> Self {
        RawGraph {
            num_vertices: g.num_vertices,
            edges: g.edges.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }
}

impl RelationalGraph {
    pub fn new(num_vertices: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= num_vertices || b >= num_vertices {
                return Err(Error::InvalidConfig(format!(
                    "edge ({a}, {b}) references a vertex outside 0..{num_vertices}"
                )));
            }
            if a == b {
                return Err(Error::InvalidConfig(format!("self-loop on vertex {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(RelationalGraph {
            num_vertices,
            edges: set,
        })
    }

    /// `0 - 1 - 2 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        RelationalGraph::new(n, (1..n).map(|i| (i - 1, i))).expect("path graph is valid")
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Relabels vertex `i` as `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        RelationalGraph::new(self.num_vertices, self.edges.iter().map(|&(a, b)| (perm[a], perm[b])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_and_validated() {
        let g = RelationalGraph::new(3, [(2, 0), (0, 2)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert!(g.has_edge(0, 2) && g.has_edge(2, 0));
        assert!(RelationalGraph::new(3, [(1, 1)]).is_err());
        assert!(RelationalGraph::new(3, [(0, 3)]).is_err());
    }

    #[test]
    fn path_graph() {
        let g = RelationalGraph::path(6);
        assert_eq!(g.num_edges(), 5);
        assert!(g.has_edge(3, 4) && !g.has_edge(0, 2));
    }
}
