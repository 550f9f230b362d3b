use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::spec::{ModelSpec, Params};
use super::train::{EpochRecord, TrainConfig, TrainedModel};
use crate::autodiff::{BnUpdateLog, ClassWeights, Matrix, RunningStats};
use crate::error::{Error, Result};
use crate::graph::{AuditReport, Graph, GraphVariant};
use crate::ingest::{FitScope, ScalerStats};
use crate::store::{ArrayData, ArrayStore};

const FORMAT: &str = "inductive-bench/checkpoint/1";

#[derive(Serialize, Deserialize)]
struct GraphMeta {
    num_nodes: usize,
    variant: GraphVariant,
    parent_hash: String,
    multigraph: bool,
    content_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format: String,
    spec: ModelSpec,
    config: TrainConfig,
    history: Vec<EpochRecord>,
    best_epoch: usize,
    class_weights: ClassWeights,
    bn_log: BnUpdateLog,
    audit: AuditReport,
    declared_fit_scope: FitScope,
    scaler_fit_scope: FitScope,
    scaler_fit_rows: usize,
    param_names: Vec<String>,
    bn_momentum: Vec<f64>,
    bn_eps: Vec<f64>,
    train_graph: GraphMeta,
}

fn shape2(m: &Matrix<f64>) -> Vec<usize> {
    vec![m.rows(), m.cols()]
}

pub fn checkpoint_to_store(model: &TrainedModel) -> Result<ArrayStore> {
    let g = &model.train_graph;
    let meta = Meta {
        format: FORMAT.into(),
        spec: model.spec.clone(),
        config: model.config.clone(),
        history: model.history.clone(),
        best_epoch: model.best_epoch,
        class_weights: model.class_weights,
        bn_log: model.bn_log.clone(),
        audit: model.audit.clone(),
        declared_fit_scope: model.declared_fit_scope,
        scaler_fit_scope: model.scaler.fit_scope,
        scaler_fit_rows: model.scaler.fit_rows,
        param_names: model.params.names.clone(),
        bn_momentum: model.params.bn.iter().map(|s| s.momentum).collect(),
        bn_eps: model.params.bn.iter().map(|s| s.eps).collect(),
        train_graph: GraphMeta {
            num_nodes: g.num_nodes(),
            variant: g.variant(),
            parent_hash: g.parent_hash().to_string(),
            multigraph: g.is_multigraph(),
            content_hash: g.content_hash(),
        },
    };
    let mut store = ArrayStore::new(serde_json::to_value(&meta)?);
    for (name, t) in model.params.names.iter().zip(&model.params.tensors) {
        store.insert(
            format!("param/{name}"),
            shape2(t),
            ArrayData::F64(t.data().to_vec()),
        )?;
    }
    for (i, s) in model.params.bn.iter().enumerate() {
        store.insert(
            format!("bn/{i}/mean"),
            vec![s.mean.len()],
            ArrayData::F64(s.mean.clone()),
        )?;
        store.insert(
            format!("bn/{i}/var"),
            vec![s.var.len()],
            ArrayData::F64(s.var.clone()),
        )?;
    }
    let d = model.scaler.mean.len();
    store.insert(
        "scaler/mean",
        vec![d],
        ArrayData::F64(model.scaler.mean.clone()),
    )?;
    store.insert(
        "scaler/std",
        vec![d],
        ArrayData::F64(model.scaler.std.clone()),
    )?;
    let n = model.train_node_ids.len();
    store.insert(
        "train/node_ids",
        vec![n],
        ArrayData::I64(model.train_node_ids.clone()),
    )?;
    store.insert(
        "train/timesteps",
        vec![n],
        ArrayData::U8(model.train_node_steps.clone()),
    )?;
    let edges: Vec<u32> = g.undirected_edges().flat_map(|(u, v)| [u, v]).collect();
    store.insert(
        "train/edges",
        vec![edges.len() / 2, 2],
        ArrayData::U32(edges),
    )?;
    Ok(store)
}

pub fn checkpoint_from_store(store: &ArrayStore) -> Result<TrainedModel> {
    let meta: Meta = serde_json::from_value(store.meta.clone())?;
    if meta.format != FORMAT {
        return Err(Error::Format(format!(
            "unsupported checkpoint format `{}`",
            meta.format
        )));
    }
    let mut tensors = Vec::new();
    for name in &meta.param_names {
        let a = store.get(&format!("param/{name}"))?;
        let (r, c) = match a.shape[..] {
            [r, c] => (r, c),
            _ => {
                return Err(Error::Format(format!(
                    "tensor `{name}` is not two-dimensional"
                )))
            }
        };
        tensors.push(Matrix::new(
            r,
            c,
            store.f64(&format!("param/{name}"))?.to_vec(),
        )?);
    }
    let mut bn = Vec::new();
    for (i, (&momentum, &eps)) in meta.bn_momentum.iter().zip(&meta.bn_eps).enumerate() {
        bn.push(RunningStats {
            mean: store.f64(&format!("bn/{i}/mean"))?.to_vec(),
            var: store.f64(&format!("bn/{i}/var"))?.to_vec(),
            momentum,
            eps,
        });
    }
    let params = Params {
        names: meta.param_names,
        tensors,
        bn,
    };
    params.check_against(&meta.spec)?;
    let flat = store.u32("train/edges")?;
    let edges: Vec<(u32, u32)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    let gm = meta.train_graph;
    let graph = if gm.multigraph {
        Graph::multigraph_from_edges(gm.num_nodes, &edges, gm.variant, gm.parent_hash)?
    } else {
        Graph::from_edges(gm.num_nodes, &edges, gm.variant, gm.parent_hash)?
    };
    if graph.content_hash() != gm.content_hash {
        return Err(Error::Integrity(
            "checkpoint training graph does not match its recorded hash".into(),
        ));
    }
    if meta.best_epoch >= meta.history.len() {
        return Err(Error::Format(
            "best epoch outside the recorded history".into(),
        ));
    }
    Ok(TrainedModel {
        spec: meta.spec,
        config: meta.config,
        params,
        history: meta.history,
        best_epoch: meta.best_epoch,
        class_weights: meta.class_weights,
        bn_log: meta.bn_log,
        audit: meta.audit,
        train_graph: Arc::new(graph),
        train_node_ids: store.i64("train/node_ids")?.to_vec(),
        train_node_steps: store.u8("train/timesteps")?.to_vec(),
        scaler: ScalerStats {
            mean: store.f64("scaler/mean")?.to_vec(),
            std: store.f64("scaler/std")?.to_vec(),
            fit_scope: meta.scaler_fit_scope,
            fit_rows: meta.scaler_fit_rows,
        },
        declared_fit_scope: meta.declared_fit_scope,
    })
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    checkpoint_to_store(model)?.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    checkpoint_from_store(&ArrayStore::read(path)?)
}
