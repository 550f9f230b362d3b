//! Graphs derived from an existing one: the training-period induced
//! subgraph and the fraud ego-graph augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Graph, GraphVariant};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::ingest::{Dataset, Label, MAX_TIMESTEP, MIN_TIMESTEP, TRAIN_MAX_STEP};

fn rebuild(
    n: usize,
    edges: &[(u32, u32)],
    multigraph: bool,
    variant: GraphVariant,
    parent: String,
) -> Result<Graph> {
    if multigraph {
        Graph::multigraph_from_edges(n, edges, variant, parent)
    } else {
        Graph::from_edges(n, edges, variant, parent)
    }
}

/// The training-period subgraph with its node table and index maps.
#[derive(Clone, Debug)]
pub struct InducedSubgraph {
    pub graph: Graph,
    pub dataset: Dataset,
    /// Old dense index → new dense index, `None` for dropped nodes.
    pub old_to_new: Vec<Option<u32>>,
    /// New dense index → old dense index.
    pub new_to_old: Vec<usize>,
}

/// Keeps every node (labeled or not) with timestep ≤ `t_max` and every
/// edge of `graph` whose endpoints both survive, relabelled densely in
/// original order.
pub fn induce_inductive_subgraph(
    graph: &Graph,
    dataset: &Dataset,
    t_max: u8,
) -> Result<InducedSubgraph> {
    if !(MIN_TIMESTEP..=MAX_TIMESTEP).contains(&t_max) {
        return Err(Error::Config(format!(
            "t_max {t_max} outside [{MIN_TIMESTEP}, {MAX_TIMESTEP}]"
        )));
    }
    if graph.num_nodes() != dataset.num_nodes() {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, dataset {}",
            graph.num_nodes(),
            dataset.num_nodes()
        )));
    }
    let keep = dataset.rows_where(|t, _| t <= t_max);
    let (sub, old_to_new) = dataset.subset(&keep)?;
    let edges: Vec<(u32, u32)> = graph
        .undirected_edges()
        .filter_map(|(u, v)| Some((old_to_new[u as usize]?, old_to_new[v as usize]?)))
        .collect();
    let g = rebuild(
        keep.len(),
        &edges,
        graph.is_multigraph(),
        GraphVariant::Induced,
        graph.content_hash(),
    )?;
    Ok(InducedSubgraph {
        graph: g,
        dataset: sub,
        old_to_new,
        new_to_old: keep,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfig {
    /// Number of ego-graphs cloned.
    pub k: usize,
    /// Standard deviation of the Gaussian noise added to cloned features.
    pub sigma: f64,
    pub rng_seed: u64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            k: 30,
            sigma: 0.02,
            rng_seed: 0,
        }
    }
}

/// Appends `cfg.k` noisy copies of 1-hop ego-graphs around illicit
/// training-period seeds as isolated components. Seeds are drawn uniformly
/// with replacement. Every cloned node is labelled illicit and takes its
/// seed's timestep.
pub fn augment_fraud_egographs(
    graph: &Graph,
    dataset: &Dataset,
    cfg: &AugConfig,
) -> Result<(Graph, Dataset)> {
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::Config(format!(
            "augmentation sigma {} must be finite and non-negative",
            cfg.sigma
        )));
    }
    if graph.num_nodes() != dataset.num_nodes() {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, dataset {}",
            graph.num_nodes(),
            dataset.num_nodes()
        )));
    }
    if cfg.k == 0 {
        return Ok((graph.clone(), dataset.clone()));
    }
    let seeds = dataset.rows_where(|t, l| l == Label::Illicit && t <= TRAIN_MAX_STEP);
    if seeds.is_empty() {
        return Err(Error::Config(
            "no illicit training-period nodes to seed augmentation".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let d = dataset.num_features();
    let n0 = dataset.num_nodes();
    let mut next_id = dataset.external_ids().iter().copied().max().unwrap_or(0) + 1;

    let mut ids = Vec::new();
    let mut steps = Vec::new();
    let mut feats = Vec::new();
    let mut new_edges: Vec<(u32, u32)> = Vec::new();
    for _ in 0..cfg.k {
        let s = seeds[rng.random_range(0..seeds.len())];
        let mut ego = vec![s];
        let mut nbrs: Vec<usize> = graph.neighbors(s).iter().map(|&v| v as usize).collect();
        nbrs.dedup();
        ego.extend(nbrs);
        let base = n0 + ids.len();
        let local = |v: usize| ego.iter().position(|&e| e == v);
        for (i, &u) in ego.iter().enumerate() {
            for &v in graph.neighbors(u) {
                if let Some(j) = local(v as usize) {
                    if i < j {
                        new_edges.push(((base + i) as u32, (base + j) as u32));
                    }
                }
            }
        }
        for &u in &ego {
            ids.push(next_id);
            next_id += 1;
            steps.push(dataset.timestep(s));
            feats.extend(dataset.features().row(u).iter().map(|&x| {
                if cfg.sigma == 0.0 {
                    x
                } else {
                    x + noise.sample(&mut rng)
                }
            }));
        }
    }
    let added = ids.len();
    let labels = vec![Label::Illicit; added];
    let features = Matrix::new(added, d, feats)?;
    let out = dataset.append_nodes(&ids, &steps, &features, &labels, &[])?;
    let mut edges: Vec<(u32, u32)> = graph.undirected_edges().collect();
    edges.extend(new_edges);
    let g = rebuild(
        n0 + added,
        &edges,
        graph.is_multigraph(),
        GraphVariant::EgoAugmented,
        graph.content_hash(),
    )?;
    Ok((g, out))
}
