use std::sync::Arc;

use super::train::TrainedModel;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ingest::Dataset;

/// Width the hybrid classifiers expect.
pub const EMBEDDING_DIM: usize = 256;

/// Eval-mode penultimate activations for every node of `dataset`, computed
/// on `graph` (normally the full graph).
pub fn extract_embeddings(
    model: &TrainedModel,
    graph: &Arc<Graph>,
    dataset: &Dataset,
) -> Result<Matrix<f64>> {
    if model.spec.hidden_dim != EMBEDDING_DIM {
        return Err(Error::Config(format!(
            "hybrid embeddings need hidden_dim {EMBEDDING_DIM}, the encoder has {}",
            model.spec.hidden_dim
        )));
    }
    Ok(model.infer(dataset.features(), graph)?.penultimate)
}

pub const DEFAULT_FUSION_ALPHA: f64 = 0.65;

/// `alpha · p_gnn + (1 − alpha) · p_mlp`, elementwise.
pub fn fuse_probabilities(p_gnn: &[f64], p_mlp: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "fusion alpha {alpha} outside [0, 1]"
        )));
    }
    if p_gnn.len() != p_mlp.len() {
        return Err(Error::Dimension(format!(
            "fusing {} and {} probabilities",
            p_gnn.len(),
            p_mlp.len()
        )));
    }
    if let Some(p) = p_gnn
        .iter()
        .chain(p_mlp)
        .find(|p| !(0.0..=1.0).contains(*p))
    {
        return Err(Error::Config(format!("probability {p} outside [0, 1]")));
    }
    Ok(p_gnn
        .iter()
        .zip(p_mlp)
        .map(|(&g, &m)| (alpha * g + (1.0 - alpha) * m).clamp(0.0, 1.0))
        .collect())
}
