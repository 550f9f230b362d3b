use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How a graph was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphVariant {
    Original,
    Similarity,
    KnnFeature,
    Temporal,
    /// Original edges united with similarity edges.
    Augmented,
    Shuffled,
    Empty,
    Induced,
    /// Training graph extended with cloned fraud ego-graphs.
    EgoAugmented,
}

impl GraphVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphVariant::Original => "original",
            GraphVariant::Similarity => "similarity",
            GraphVariant::KnnFeature => "knn_feature",
            GraphVariant::Temporal => "temporal",
            GraphVariant::Augmented => "augmented",
            GraphVariant::Shuffled => "shuffled",
            GraphVariant::Empty => "empty",
            GraphVariant::Induced => "induced",
            GraphVariant::EgoAugmented => "ego_augmented",
        }
    }
}

/// Undirected graph in symmetric CSR form.
///
/// Every undirected edge `{u, v}` is stored twice, once in each endpoint's
/// row. Rows are sorted; they are strictly increasing except in multigraphs
/// (shuffled variants), where parallel edges are kept so the edge count is
/// preserved. Self-loops are never stored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    variant: GraphVariant,
    parent_hash: String,
    multigraph: bool,
}

impl Graph {
    /// Builds a simple graph from undirected pairs in any orientation.
    /// Duplicate pairs (either orientation) and self-loops are dropped.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(u32, u32)],
        variant: GraphVariant,
        parent_hash: impl Into<String>,
    ) -> Result<Self> {
        Self::assemble(num_nodes, edges, variant, parent_hash.into(), false)
    }

    /// Builds a multigraph: parallel edges are kept, self-loops rejected.
    pub fn multigraph_from_edges(
        num_nodes: usize,
        edges: &[(u32, u32)],
        variant: GraphVariant,
        parent_hash: impl Into<String>,
    ) -> Result<Self> {
        if let Some(&(u, _)) = edges.iter().find(|(u, v)| u == v) {
            return Err(Error::Integrity(format!("self-loop on node {u}")));
        }
        Self::assemble(num_nodes, edges, variant, parent_hash.into(), true)
    }

    pub fn empty(num_nodes: usize, variant: GraphVariant, parent_hash: impl Into<String>) -> Self {
        Self {
            num_nodes,
            offsets: vec![0; num_nodes + 1],
            neighbors: Vec::new(),
            variant,
            parent_hash: parent_hash.into(),
            multigraph: false,
        }
    }

    fn assemble(
        num_nodes: usize,
        edges: &[(u32, u32)],
        variant: GraphVariant,
        parent_hash: String,
        multigraph: bool,
    ) -> Result<Self> {
        if num_nodes > u32::MAX as usize {
            return Err(Error::Config(format!(
                "{num_nodes} nodes exceed u32 indexing"
            )));
        }
        let mut directed: Vec<(u32, u32)> = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u as usize >= num_nodes || v as usize >= num_nodes {
                return Err(Error::Integrity(format!(
                    "edge ({u}, {v}) outside {num_nodes} nodes"
                )));
            }
            if u == v {
                continue;
            }
            if multigraph {
                directed.push((u, v));
                directed.push((v, u));
            } else {
                let (a, b) = if u < v { (u, v) } else { (v, u) };
                directed.push((a, b));
            }
        }
        if !multigraph {
            directed.sort_unstable();
            directed.dedup();
            let n = directed.len();
            for i in 0..n {
                let (a, b) = directed[i];
                directed.push((b, a));
            }
        }
        directed.sort_unstable();

        let mut offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &directed {
            offsets[u as usize + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let neighbors = directed.into_iter().map(|(_, v)| v).collect();
        Ok(Self {
            num_nodes,
            offsets,
            neighbors,
            variant,
            parent_hash,
            multigraph,
        })
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored (directed) adjacency entries, 2x the undirected count.
    #[inline]
    pub fn directed_edge_count(&self) -> usize {
        self.neighbors.len()
    }

    #[inline]
    pub fn undirected_edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn variant(&self) -> GraphVariant {
        self.variant
    }

    pub fn parent_hash(&self) -> &str {
        &self.parent_hash
    }

    pub fn is_multigraph(&self) -> bool {
        self.multigraph
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    /// Each undirected edge once as `(u, v)` with `u < v`, parallel edges
    /// repeated.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| (v as usize) > u)
                .map(move |&v| (u as u32, v))
        })
    }

    /// Re-tags the graph without touching its adjacency.
    pub fn with_provenance(
        mut self,
        variant: GraphVariant,
        parent_hash: impl Into<String>,
    ) -> Self {
        self.variant = variant;
        self.parent_hash = parent_hash.into();
        self
    }

    /// SHA-256 over node count and adjacency. Variant tags are excluded so
    /// two graphs with identical structure hash identically.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_nodes as u64).to_le_bytes());
        for &o in &self.offsets {
            h.update((o as u64).to_le_bytes());
        }
        for &v in &self.neighbors {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Checks symmetry, sortedness, bounds, and absence of self-loops.
    pub fn validate(&self) -> Result<()> {
        if self.offsets.len() != self.num_nodes + 1
            || self.offsets[self.num_nodes] != self.neighbors.len()
        {
            return Err(Error::Integrity("malformed CSR offsets".into()));
        }
        for u in 0..self.num_nodes {
            let row = self.neighbors(u);
            for w in row.windows(2) {
                let ok = if self.multigraph {
                    w[0] <= w[1]
                } else {
                    w[0] < w[1]
                };
                if !ok {
                    return Err(Error::Integrity(format!("row {u} is not canonical")));
                }
            }
            for &v in row {
                let v = v as usize;
                if v >= self.num_nodes {
                    return Err(Error::Integrity(format!(
                        "neighbor {v} of {u} out of range"
                    )));
                }
                if v == u {
                    return Err(Error::Integrity(format!("self-loop on {u}")));
                }
                let forward = row.iter().filter(|&&x| x as usize == v).count();
                let backward = self
                    .neighbors(v)
                    .iter()
                    .filter(|&&x| x as usize == u)
                    .count();
                if forward != backward {
                    return Err(Error::Integrity(format!(
                        "edge ({u}, {v}) is not symmetric"
                    )));
                }
            }
        }
        Ok(())
    }
}
