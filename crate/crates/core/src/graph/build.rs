//! Builders for the original transaction graph and the feature-derived
//! variants, plus the edge-shuffle and empty null models.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphVariant};
use crate::autodiff::{gemm_nt, Matrix};
use crate::error::{Error, Result};
use crate::ingest::Dataset;

pub const SIMILARITY_THRESHOLD: f64 = 0.92;
pub const KNN_K: usize = 5;
pub const TEMPORAL_K: usize = 3;
/// Query rows per dense block in the similarity and nearest-neighbour
/// builders.
pub const DEFAULT_BLOCK_ROWS: usize = 512;

/// Where shuffled endpoints are drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleScope {
    #[default]
    Global,
}

/// Declarative description of a graph variant, as stored in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphRecipe {
    Original,
    Similarity {
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    KnnFeature {
        #[serde(default = "default_knn")]
        k: usize,
    },
    Temporal {
        #[serde(default = "default_temporal")]
        k: usize,
    },
    Augmented {
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    /// Original edge count with uniformly resampled endpoints.
    Shuffled {
        #[serde(default)]
        scope: ShuffleScope,
    },
    Empty,
}

fn default_threshold() -> f64 {
    SIMILARITY_THRESHOLD
}
fn default_knn() -> usize {
    KNN_K
}
fn default_temporal() -> usize {
    TEMPORAL_K
}

impl GraphRecipe {
    pub fn variant(&self) -> GraphVariant {
        match self {
            GraphRecipe::Original => GraphVariant::Original,
            GraphRecipe::Similarity { .. } => GraphVariant::Similarity,
            GraphRecipe::KnnFeature { .. } => GraphVariant::KnnFeature,
            GraphRecipe::Temporal { .. } => GraphVariant::Temporal,
            GraphRecipe::Augmented { .. } => GraphVariant::Augmented,
            GraphRecipe::Shuffled { .. } => GraphVariant::Shuffled,
            GraphRecipe::Empty => GraphVariant::Empty,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, GraphRecipe::Shuffled { .. })
    }

    /// Builds the graph over `dataset`. Only the shuffled recipe consumes
    /// randomness.
    pub fn build<R: Rng + ?Sized>(&self, dataset: &Dataset, rng: &mut R) -> Result<Graph> {
        match *self {
            GraphRecipe::Original => build_original(dataset),
            GraphRecipe::Similarity { threshold } => {
                build_similarity(dataset, threshold, DEFAULT_BLOCK_ROWS)
            }
            GraphRecipe::KnnFeature { k } => build_knn(dataset, k),
            GraphRecipe::Temporal { k } => build_temporal(dataset, k),
            GraphRecipe::Augmented { threshold } => build_augmented_union(dataset, threshold),
            GraphRecipe::Shuffled {
                scope: ShuffleScope::Global,
            } => shuffle_edges(&build_original(dataset)?, rng),
            GraphRecipe::Empty => Ok(empty_edges(&build_original(dataset)?)),
        }
    }
}

/// The ingested transaction edges over every node.
pub fn build_original(dataset: &Dataset) -> Result<Graph> {
    Graph::from_edges(
        dataset.num_nodes(),
        dataset.edges(),
        GraphVariant::Original,
        dataset.content_hash(),
    )
}

/// Rows of each timestep, ascending.
fn rows_by_step(dataset: &Dataset) -> BTreeMap<u8, Vec<usize>> {
    let mut m: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for i in 0..dataset.num_nodes() {
        m.entry(dataset.timestep(i)).or_default().push(i);
    }
    m
}

/// Edge `(u, v)` iff both nodes share a timestep and their cosine
/// similarity exceeds `threshold`. Rows with zero norm get no edges.
pub fn build_similarity(dataset: &Dataset, threshold: f64, block_rows: usize) -> Result<Graph> {
    if !(threshold > -1.0 && threshold <= 1.0) {
        return Err(Error::Config(format!(
            "similarity threshold {threshold} outside (-1, 1]"
        )));
    }
    let block_rows = block_rows.max(1);
    let x = dataset.features();
    let groups: Vec<Vec<usize>> = rows_by_step(dataset).into_values().collect();
    let per_step: Vec<Vec<(u32, u32)>> = groups
        .par_iter()
        .map(|rows| {
            let mut unit = x.select_rows(rows);
            let mut live = vec![true; rows.len()];
            for (r, alive) in live.iter_mut().enumerate() {
                let norm = unit.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    unit.row_mut(r).iter_mut().for_each(|v| *v /= norm);
                } else {
                    *alive = false;
                }
            }
            let m = rows.len();
            let mut edges = Vec::new();
            for start in (0..m).step_by(block_rows) {
                let end = (start + block_rows).min(m);
                let block = unit.select_rows(&(start..end).collect::<Vec<_>>());
                let mut sims = Matrix::zeros(end - start, m);
                gemm_nt(&block, &unit, &mut sims, 0.0);
                for a in start..end {
                    if !live[a] {
                        continue;
                    }
                    let row = sims.row(a - start);
                    for b in (a + 1)..m {
                        if live[b] && row[b] > threshold {
                            edges.push((rows[a] as u32, rows[b] as u32));
                        }
                    }
                }
            }
            edges
        })
        .collect();
    let edges: Vec<(u32, u32)> = per_step.into_iter().flatten().collect();
    Graph::from_edges(
        dataset.num_nodes(),
        &edges,
        GraphVariant::Similarity,
        dataset.content_hash(),
    )
}

fn exact_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// For every query row, the `k` nearest reference rows by Euclidean
/// distance, ties broken by smaller index. A query is never its own
/// neighbour. Candidate screening uses a blocked product; the final order
/// uses exact distances.
fn nearest(x: &Matrix<f64>, queries: &[usize], refs: &[usize], k: usize) -> Vec<(u32, u32)> {
    if k == 0 || refs.is_empty() || queries.is_empty() {
        return Vec::new();
    }
    let refs_m = x.select_rows(refs);
    let ref_norms: Vec<f64> = (0..refs.len())
        .map(|r| refs_m.row(r).iter().map(|v| v * v).sum())
        .collect();
    let mut out = Vec::with_capacity(queries.len() * k);
    for chunk in queries.chunks(DEFAULT_BLOCK_ROWS) {
        let q = x.select_rows(chunk);
        let mut dots = Matrix::zeros(chunk.len(), refs.len());
        gemm_nt(&q, &refs_m, &mut dots, 0.0);
        for (qi, &node) in chunk.iter().enumerate() {
            let qn: f64 = q.row(qi).iter().map(|v| v * v).sum();
            let mut approx: Vec<(f64, usize)> = dots
                .row(qi)
                .iter()
                .enumerate()
                .filter(|&(j, _)| refs[j] != node)
                .map(|(j, &d)| ((qn + ref_norms[j] - 2.0 * d).max(0.0), j))
                .collect();
            if approx.is_empty() {
                continue;
            }
            let take = k.min(approx.len());
            approx.select_nth_unstable_by(take - 1, |a, b| a.0.total_cmp(&b.0));
            let kth = approx[..take].iter().map(|a| a.0).fold(0.0, f64::max);
            // Anything within rounding distance of the k-th candidate is
            // re-ranked exactly.
            let slack = 1e-9 * (qn + kth).max(1.0);
            let mut exact: Vec<(f64, usize)> = approx
                .iter()
                .filter(|a| a.0 <= kth + slack)
                .map(|&(_, j)| (exact_sq_dist(x.row(node), refs_m.row(j)), refs[j]))
                .collect();
            exact.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            out.extend(
                exact
                    .iter()
                    .take(take)
                    .map(|&(_, j)| (node as u32, j as u32)),
            );
        }
    }
    out
}

/// Each node's `k` nearest neighbours within its own timestep, symmetrised.
/// Timesteps with at most `k` nodes become cliques.
pub fn build_knn(dataset: &Dataset, k: usize) -> Result<Graph> {
    let x = dataset.features();
    let groups: Vec<Vec<usize>> = rows_by_step(dataset).into_values().collect();
    let edges: Vec<(u32, u32)> = groups
        .par_iter()
        .map(|rows| nearest(x, rows, rows, k))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Graph::from_edges(
        dataset.num_nodes(),
        &edges,
        GraphVariant::KnnFeature,
        dataset.content_hash(),
    )
}

/// Each node in timestep `t` links to its `k` nearest neighbours in `t + 1`.
pub fn build_temporal(dataset: &Dataset, k: usize) -> Result<Graph> {
    let x = dataset.features();
    let groups = rows_by_step(dataset);
    let pairs: Vec<(&Vec<usize>, &Vec<usize>)> = groups
        .iter()
        .filter_map(|(t, rows)| groups.get(&(t + 1)).map(|next| (rows, next)))
        .collect();
    let edges: Vec<(u32, u32)> = pairs
        .par_iter()
        .map(|(rows, next)| nearest(x, rows, next, k))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Graph::from_edges(
        dataset.num_nodes(),
        &edges,
        GraphVariant::Temporal,
        dataset.content_hash(),
    )
}

/// Deduplicated union of two graphs over the same nodes.
pub fn union_graphs(a: &Graph, b: &Graph, variant: GraphVariant) -> Result<Graph> {
    if a.num_nodes() != b.num_nodes() {
        return Err(Error::Dimension(format!(
            "union of graphs with {} and {} nodes",
            a.num_nodes(),
            b.num_nodes()
        )));
    }
    let edges: Vec<(u32, u32)> = a.undirected_edges().chain(b.undirected_edges()).collect();
    let parent = format!("{}+{}", a.content_hash(), b.content_hash());
    Graph::from_edges(a.num_nodes(), &edges, variant, parent)
}

/// Original transaction edges united with the similarity edges.
pub fn build_augmented_union(dataset: &Dataset, threshold: f64) -> Result<Graph> {
    let original = build_original(dataset)?;
    let similar = build_similarity(dataset, threshold, DEFAULT_BLOCK_ROWS)?;
    union_graphs(&original, &similar, GraphVariant::Augmented)
}

/// Same number of undirected edges with both endpoints drawn uniformly over
/// all nodes. Self-loops are redrawn; parallel edges are kept.
pub fn shuffle_edges<R: Rng + ?Sized>(graph: &Graph, rng: &mut R) -> Result<Graph> {
    let n = graph.num_nodes();
    let m = graph.undirected_edge_count();
    if m > 0 && n < 2 {
        return Err(Error::Config(format!(
            "cannot shuffle {m} edges over {n} node(s)"
        )));
    }
    let mut edges = Vec::with_capacity(m);
    while edges.len() < m {
        let u = rng.random_range(0..n as u32);
        let v = rng.random_range(0..n as u32);
        if u != v {
            edges.push((u, v));
        }
    }
    Graph::multigraph_from_edges(n, &edges, GraphVariant::Shuffled, graph.content_hash())
}

/// Same nodes, no edges.
pub fn empty_edges(graph: &Graph) -> Graph {
    Graph::empty(graph.num_nodes(), GraphVariant::Empty, graph.content_hash())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Label;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn points(rows: &[Vec<f64>], steps: &[u8]) -> Dataset {
        let n = rows.len();
        Dataset::new(
            (0..n as i64).collect(),
            steps.to_vec(),
            Matrix::from_rows(rows).unwrap(),
            vec![Label::Unknown; n],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn similarity_identical_and_orthogonal() {
        let d = points(
            &[vec![1.0, 2.0], vec![1.0, 2.0], vec![-2.0, 1.0]],
            &[1, 1, 1],
        );
        let g = build_similarity(&d, 0.92, 2).unwrap();
        assert!(g.has_edge(0, 1));
        assert!(!g.has_edge(0, 2) && !g.has_edge(1, 2));
        assert_eq!(g.variant(), GraphVariant::Similarity);
    }

    #[test]
    fn similarity_never_crosses_timesteps() {
        let d = points(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[1, 2]);
        assert_eq!(
            build_similarity(&d, 0.5, 8).unwrap().directed_edge_count(),
            0
        );
    }

    #[test]
    fn similarity_threshold_range() {
        let d = points(&[vec![1.0]], &[1]);
        assert!(matches!(
            build_similarity(&d, -1.0, 4),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_similarity(&d, 1.5, 4),
            Err(Error::Config(_))
        ));
        assert!(build_similarity(&d, 1.0, 4).is_ok());
    }

    /// Brute-force cosine oracle on random data, for several block sizes.
    #[test]
    fn similarity_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..4).map(|_| rng.random::<f64>() - 0.3).collect())
            .collect();
        let steps: Vec<u8> = (0..40).map(|i| 1 + (i % 3) as u8).collect();
        let d = points(&rows, &steps);
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
                * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        for block in [1, 7, 64] {
            let g = build_similarity(&d, 0.8, block).unwrap();
            for u in 0..40 {
                for v in 0..40 {
                    let want = u != v && steps[u] == steps[v] && cos(&rows[u], &rows[v]) > 0.8;
                    assert_eq!(g.has_edge(u, v), want, "block {block} pair ({u}, {v})");
                }
            }
        }
    }

    #[test]
    fn knn_collinear_points() {
        let d = points(&[vec![0.0], vec![1.0], vec![2.5]], &[1, 1, 1]);
        let g = build_knn(&d, 1).unwrap();
        let edges: Vec<_> = g.undirected_edges().collect();
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn knn_tie_goes_to_smaller_index() {
        // Node 1 is equidistant from 0 and 2.
        let d = points(&[vec![0.0], vec![1.0], vec![2.0]], &[1, 1, 1]);
        let g = build_knn(&d, 1).unwrap();
        // 0 → 1, 1 → 0 (tie with 2), 2 → 1.
        assert_eq!(
            g.undirected_edges().collect::<Vec<_>>(),
            vec![(0, 1), (1, 2)]
        );
        let d = points(&[vec![1.0], vec![0.0], vec![2.0]], &[1, 1, 1]);
        let g = build_knn(&d, 1).unwrap();
        assert_eq!(
            g.undirected_edges().collect::<Vec<_>>(),
            vec![(0, 1), (0, 2)]
        );
    }

    #[test]
    fn knn_small_steps_become_cliques_and_singletons_stay_isolated() {
        let d = points(&[vec![0.0], vec![5.0], vec![9.0], vec![1.0]], &[1, 1, 1, 2]);
        let g = build_knn(&d, 5).unwrap();
        assert_eq!(g.undirected_edge_count(), 3);
        assert_eq!(g.degree(3), 0);
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                (0..3)
                    .map(|_| (rng.random_range(0..4) as f64) * 0.5)
                    .collect()
            })
            .collect();
        let steps = vec![1u8; 30];
        let d = points(&rows, &steps);
        let k = 3;
        let g = build_knn(&d, k).unwrap();
        let mut want = Vec::new();
        for u in 0..30 {
            let mut c: Vec<(f64, usize)> = (0..30)
                .filter(|&v| v != u)
                .map(|v| (exact_sq_dist(&rows[u], &rows[v]), v))
                .collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            want.extend(c[..k].iter().map(|&(_, v)| (u as u32, v as u32)));
        }
        let oracle = Graph::from_edges(30, &want, GraphVariant::KnnFeature, "").unwrap();
        assert_eq!(g.content_hash(), oracle.content_hash());
    }

    #[test]
    fn temporal_links_forward_only() {
        let d = points(&[vec![0.0], vec![3.0]], &[1, 2]);
        assert_eq!(build_temporal(&d, 3).unwrap().undirected_edge_count(), 1);
        let d = points(&[vec![0.0], vec![3.0], vec![1.0]], &[4, 4, 4]);
        assert_eq!(build_temporal(&d, 3).unwrap().directed_edge_count(), 0);
        // Gap between steps 1 and 3: no t → t+1 pairs.
        let d = points(&[vec![0.0], vec![3.0]], &[1, 3]);
        assert_eq!(build_temporal(&d, 3).unwrap().directed_edge_count(), 0);
    }

    #[test]
    fn union_counts() {
        let a = Graph::from_edges(4, &[(0, 1)], GraphVariant::Original, "").unwrap();
        let b = Graph::from_edges(4, &[(2, 3)], GraphVariant::Similarity, "").unwrap();
        assert_eq!(
            union_graphs(&a, &b, GraphVariant::Augmented)
                .unwrap()
                .undirected_edge_count(),
            2
        );
        assert_eq!(
            union_graphs(&a, &a, GraphVariant::Augmented)
                .unwrap()
                .undirected_edge_count(),
            1
        );
    }

    #[test]
    fn shuffle_preserves_count_and_is_seeded() {
        let g = Graph::from_edges(
            6,
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)],
            GraphVariant::Original,
            "",
        )
        .unwrap();
        let a = shuffle_edges(&g, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = shuffle_edges(&g, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.undirected_edge_count(), 5);
        assert_eq!(a.variant(), GraphVariant::Shuffled);
        a.validate().unwrap();
        let none = Graph::empty(1, GraphVariant::Original, "");
        assert_eq!(
            shuffle_edges(&none, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap()
                .directed_edge_count(),
            0
        );
    }

    #[test]
    fn empty_keeps_nodes() {
        let g = Graph::from_edges(3, &[(0, 1)], GraphVariant::Original, "").unwrap();
        let e = empty_edges(&g);
        assert_eq!((e.num_nodes(), e.directed_edge_count()), (3, 0));
        assert_eq!(e.variant(), GraphVariant::Empty);
    }

    #[test]
    fn recipe_round_trips_through_json() {
        for r in [
            GraphRecipe::Original,
            GraphRecipe::Similarity { threshold: 0.9 },
            GraphRecipe::Shuffled {
                scope: ShuffleScope::Global,
            },
            GraphRecipe::Empty,
        ] {
            let s = serde_json::to_string(&r).unwrap();
            assert_eq!(serde_json::from_str::<GraphRecipe>(&s).unwrap(), r);
        }
        let r: GraphRecipe = serde_json::from_str(r#"{"kind":"knn_feature"}"#).unwrap();
        assert_eq!(r, GraphRecipe::KnnFeature { k: 5 });
    }
}
