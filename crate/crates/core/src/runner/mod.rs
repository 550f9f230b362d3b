//! Declarative experiments: condition × seed grids, per-cell records,
//! statistical comparisons and the CSV data behind each table.

mod analysis;
mod compare;
mod data;
mod exec;
mod record;
mod spec;
mod synth;
mod tables;

use std::path::Path;

pub use analysis::{drift_by_step, run_analyses, DriftRow};
pub use compare::{compare, compare_all, metric_by_seed, ComparisonOutcome};
pub use data::{scopes_of, DataContext, DataSource, Scaled};
pub use exec::{
    cells, graph_variant_label, prebuild_graphs, run, run_cell, GraphCache, RunOptions,
};
pub use record::{
    checkpoint_path, load_records, record_path, CalibrationSummary, CellStatus, CurvePoint,
    HistorySummary, RunRecord, RECORD_SCHEMA, RECORD_SCHEMA_VERSION,
};
pub use spec::{
    Analysis, CellConfig, ComparisonSpec, ConditionSpec, DataSpec, ExperimentSpec, FeatureSet,
    HybridEncoder, HybridInputs, HybridSpec, ModelChoice, TrainingSpec, BENCHMARK_SPEC, DATA_ENV,
};
pub use synth::{synthetic_dataset, SyntheticConfig};
pub use tables::{emit_tables, CsvTable, Manifest, ManifestEntry, NA};

use crate::error::Result;

/// Comparisons and tables for a finished grid, written into the
/// experiment directory.
pub fn finalize(
    spec: &ExperimentSpec,
    records: &[RunRecord],
    out: &Path,
) -> Result<(Vec<ComparisonOutcome>, Manifest)> {
    let dir = out.join(&spec.name);
    let reports = compare_all(spec, records);
    let manifest = emit_tables(spec, records, &reports, &dir)?;
    Ok((reports, manifest))
}

#[cfg(test)]
mod tests;
