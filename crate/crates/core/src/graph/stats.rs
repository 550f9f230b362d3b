use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Graph;

pub const CLUSTERING_SAMPLE: usize = 3000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub directed_edge_count: usize,
    pub mean_degree: f64,
    pub max_degree: usize,
    /// Mean local clustering over a uniform node sample.
    pub clustering_estimate: f64,
    pub clustering_sample: usize,
    pub connected_components: usize,
}

/// Distinct neighbours of `v` (multigraph rows may repeat).
fn distinct(g: &Graph, v: usize) -> Vec<u32> {
    let mut n = g.neighbors(v).to_vec();
    n.dedup();
    n
}

/// Triangles through `v` over possible wedges; 0 when degree < 2.
pub fn local_clustering(g: &Graph, v: usize) -> f64 {
    let nv = distinct(g, v);
    let k = nv.len();
    if k < 2 {
        return 0.0;
    }
    let mut links = 0usize;
    for &u in &nv {
        let nu = distinct(g, u as usize);
        // Sorted-list intersection.
        let (mut i, mut j) = (0, 0);
        while i < nv.len() && j < nu.len() {
            match nv[i].cmp(&nu[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    links += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    // Each neighbour-neighbour link is seen from both ends.
    (links / 2) as f64 / (k * (k - 1) / 2) as f64
}

/// Connected components by union-find with path halving.
pub fn connected_components(g: &Graph) -> usize {
    let n = g.num_nodes();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut comps = n;
    for (u, v) in g.undirected_edges() {
        let a = find(&mut parent, u as usize);
        let b = find(&mut parent, v as usize);
        if a != b {
            parent[a.max(b)] = a.min(b);
            comps -= 1;
        }
    }
    comps
}

pub fn graph_stats<R: Rng + ?Sized>(g: &Graph, sample_size: usize, rng: &mut R) -> GraphStats {
    let n = g.num_nodes();
    let nodes: Vec<usize> = if n <= sample_size {
        (0..n).collect()
    } else {
        let mut s = sample(rng, n, sample_size).into_vec();
        s.sort_unstable();
        s
    };
    let clustering = if nodes.is_empty() {
        0.0
    } else {
        nodes.iter().map(|&v| local_clustering(g, v)).sum::<f64>() / nodes.len() as f64
    };
    GraphStats {
        num_nodes: n,
        directed_edge_count: g.directed_edge_count(),
        mean_degree: if n == 0 {
            0.0
        } else {
            g.directed_edge_count() as f64 / n as f64
        },
        max_degree: (0..n).map(|v| g.degree(v)).max().unwrap_or(0),
        clustering_estimate: clustering,
        clustering_sample: nodes.len(),
        connected_components: connected_components(g),
    }
}
