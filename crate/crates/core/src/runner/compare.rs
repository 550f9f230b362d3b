//! Seed-vector statistics between two conditions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::record::RunRecord;
use super::spec::{ComparisonSpec, ExperimentSpec};
use crate::error::{Error, Result};
use crate::metrics::{paired_t, welch_t, MetricKind, StatReport, TestKind};

/// Metric of every successful record of `condition`, keyed by seed.
pub fn metric_by_seed(
    records: &[RunRecord],
    condition: &str,
    metric: MetricKind,
) -> BTreeMap<u64, f64> {
    records
        .iter()
        .filter(|r| r.condition == condition && r.is_ok())
        .filter_map(|r| Some((r.seed, r.metrics.as_ref()?.get(metric))))
        .collect()
}

/// Assembles per-seed vectors in seed order and runs the requested test.
/// Paired tests need the same seeds on both sides.
pub fn compare(records: &[RunRecord], cmp: &ComparisonSpec) -> Result<StatReport> {
    let a = metric_by_seed(records, &cmp.a, cmp.metric());
    let b = metric_by_seed(records, &cmp.b, cmp.metric());
    match cmp.test {
        TestKind::Paired => {
            if !a.keys().eq(b.keys()) {
                return Err(Error::Validation(format!(
                    "paired comparison {} needs identical seed sets: {:?} vs {:?}",
                    cmp.label(),
                    a.keys().collect::<Vec<_>>(),
                    b.keys().collect::<Vec<_>>()
                )));
            }
            paired_t(
                &a.into_values().collect::<Vec<_>>(),
                &b.into_values().collect::<Vec<_>>(),
            )
        }
        TestKind::Welch => welch_t(
            &a.into_values().collect::<Vec<_>>(),
            &b.into_values().collect::<Vec<_>>(),
        ),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub name: String,
    pub a: String,
    pub b: String,
    pub metric: MetricKind,
    pub test: TestKind,
    pub report: Option<StatReport>,
    pub error: Option<String>,
    pub tables: Vec<String>,
}

/// Every comparison of the spec; one that cannot be computed carries its
/// error instead of a report.
pub fn compare_all(spec: &ExperimentSpec, records: &[RunRecord]) -> Vec<ComparisonOutcome> {
    spec.comparisons
        .iter()
        .map(|c| {
            let r = compare(records, c);
            ComparisonOutcome {
                name: c.label(),
                a: c.a.clone(),
                b: c.b.clone(),
                metric: c.metric(),
                test: c.test,
                error: r.as_ref().err().map(|e| e.to_string()),
                report: r.ok(),
                tables: c.tables.clone(),
            }
        })
        .collect()
}
