//! Dataset-level outputs that do not depend on any trained model.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::DataContext;
use super::exec::GraphCache;
use super::spec::{Analysis, ExperimentSpec};
use super::tables::CsvTable;
use crate::error::Result;
use crate::graph::{graph_stats, induce_inductive_subgraph, GraphRecipe, CLUSTERING_SAMPLE};
use crate::ingest::{dataset_summary, Dataset, TEST_MIN_STEP, TRAIN_MAX_STEP};
use crate::metrics::{l2_mean_drift, mmd_rbf, MMD_MAX_ROWS};
use crate::store::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub timestep: u8,
    pub rows: usize,
    pub mmd: f64,
    pub mmd2_unbiased: f64,
    pub bandwidth: f64,
    pub l2_mean_shift: f64,
}

/// Feature drift of every test step against all training-period nodes.
pub fn drift_by_step(ds: &Dataset) -> Result<Vec<DriftRow>> {
    let train = ds
        .features()
        .select_rows(&ds.rows_where(|t, _| t <= TRAIN_MAX_STEP));
    let mut out = Vec::new();
    for t in TEST_MIN_STEP..=crate::ingest::MAX_TIMESTEP {
        let rows = ds.rows_where(|s, _| s == t);
        if rows.len() < 2 {
            continue;
        }
        let test = ds.features().select_rows(&rows);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        rng.set_stream(t as u64);
        let m = mmd_rbf(&train, &test, MMD_MAX_ROWS, &mut rng)?;
        out.push(DriftRow {
            timestep: t,
            rows: rows.len(),
            mmd: m.mmd,
            mmd2_unbiased: m.mmd2_unbiased,
            bandwidth: m.bandwidth,
            l2_mean_shift: l2_mean_drift(&train, &test)?,
        });
    }
    Ok(out)
}

fn write_drift(ds: &Dataset, dir: &Path) -> Result<()> {
    let rows = drift_by_step(ds)?;
    let mut t = CsvTable::new(&[
        "timestep",
        "rows",
        "mmd",
        "mmd2_unbiased",
        "bandwidth",
        "l2_mean_shift",
    ]);
    for r in &rows {
        t.push(vec![
            r.timestep.to_string(),
            r.rows.to_string(),
            format!("{:.6}", r.mmd),
            format!("{:.6}", r.mmd2_unbiased),
            format!("{:.6}", r.bandwidth),
            format!("{:.6}", r.l2_mean_shift),
        ]);
    }
    t.write(&dir.join("drift.csv"))
}

fn write_graph_stats(
    spec: &ExperimentSpec,
    ctx: &DataContext,
    graphs: &GraphCache,
    dir: &Path,
) -> Result<()> {
    let ds = &ctx.any().dataset;
    let mut recipes: Vec<GraphRecipe> = vec![GraphRecipe::Original];
    for c in spec.conditions.iter().filter(|c| c.model.trains_encoder()) {
        if !recipes.contains(&c.graph) {
            recipes.push(c.graph.clone());
        }
    }
    let mut t = CsvTable::new(&[
        "variant",
        "nodes",
        "directed_edges",
        "mean_degree",
        "max_degree",
        "clustering",
        "clustering_sample",
        "components",
    ]);
    let mut add = |name: &str, g: &crate::graph::Graph| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = graph_stats(g, CLUSTERING_SAMPLE, &mut rng);
        t.push(vec![
            name.to_string(),
            s.num_nodes.to_string(),
            s.directed_edge_count.to_string(),
            format!("{:.4}", s.mean_degree),
            s.max_degree.to_string(),
            format!("{:.4}", s.clustering_estimate),
            s.clustering_sample.to_string(),
            s.connected_components.to_string(),
        ]);
    };
    for r in &recipes {
        let cached = graphs
            .iter()
            .find(|(k, _)| {
                k.starts_with(&format!(
                    "{}|",
                    serde_json::to_string(r).unwrap_or_default()
                ))
            })
            .and_then(|(_, g)| g.as_ref().ok().cloned());
        let g = match cached {
            Some(g) => g,
            None => std::sync::Arc::new(r.build(ds, &mut ChaCha8Rng::seed_from_u64(0))?),
        };
        add(r.variant().as_str(), &g);
        if *r == GraphRecipe::Original {
            let sub = induce_inductive_subgraph(&g, ds, TRAIN_MAX_STEP)?;
            add("induced", &sub.graph);
        }
    }
    t.write(&dir.join("graph_stats.csv"))
}

fn write_summary(ctx: &DataContext, dir: &Path) -> Result<()> {
    let s = dataset_summary(&ctx.any().dataset, &ctx.masks);
    write_atomic(
        &dir.join("dataset_summary.json"),
        serde_json::to_string_pretty(&s)?.as_bytes(),
    )?;
    s.write_csv(&dir.join("dataset_per_step.csv"))
}

/// Runs the requested analyses; a failing analysis is logged and skipped.
pub fn run_analyses(spec: &ExperimentSpec, ctx: &DataContext, graphs: &GraphCache, dir: &Path) {
    for a in &spec.analyses {
        let r = match a {
            Analysis::DatasetSummary => write_summary(ctx, dir),
            Analysis::GraphStats => write_graph_stats(spec, ctx, graphs, dir),
            Analysis::Drift => write_drift(&ctx.any().dataset, dir),
        };
        if let Err(e) = r {
            log::warn!("analysis {a:?} skipped: {e}");
        }
    }
}
