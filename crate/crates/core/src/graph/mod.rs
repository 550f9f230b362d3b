//! Graph variants over the transaction table, the training-period
//! subgraph, ego-graph augmentation, topology statistics and the leakage
//! audit.

mod audit;
mod build;
mod csr;
mod derive;
mod export;
mod stats;

pub use audit::{
    leakage_audit, AuditDigest, AuditReport, Protocol, TrainingSetup, Violation, ViolationKind,
};
pub use build::{
    build_augmented_union, build_knn, build_original, build_similarity, build_temporal,
    empty_edges, shuffle_edges, union_graphs, GraphRecipe, ShuffleScope, DEFAULT_BLOCK_ROWS, KNN_K,
    SIMILARITY_THRESHOLD, TEMPORAL_K,
};
pub use csr::{Graph, GraphVariant};
pub use derive::{augment_fraud_egographs, induce_inductive_subgraph, AugConfig, InducedSubgraph};
pub use export::{export_edge_list, import_edge_list, meta_path, EdgeListMeta};
pub use stats::{
    connected_components, graph_stats, local_clustering, GraphStats, CLUSTERING_SAMPLE,
};
