//! Structural checks that nothing from the test period reached training.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::autodiff::BnUpdateLog;
use crate::error::{Error, Result};
use crate::ingest::{Dataset, FitScope, ScalerStats, TEST_MIN_STEP};

/// Which graph the encoder sees while training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Training forward passes run on the subgraph induced by the training
    /// period only.
    #[default]
    StrictInductive,
    /// Training forward passes run on the full graph; only the loss is
    /// restricted to training labels.
    Transductive,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::StrictInductive => "strict_inductive",
            Protocol::Transductive => "transductive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    TestNodeInTrainGraph,
    ScalerSawTestRows,
    BnStatsUpdatedOnTest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending node id or statistic.
    pub subject: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub pass: bool,
    pub violations: Vec<Violation>,
}

/// Compact form stored in run records.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditDigest {
    pub pass: bool,
    pub counts: BTreeMap<ViolationKind, usize>,
    /// Up to five example subjects per kind.
    pub examples: BTreeMap<ViolationKind, Vec<String>>,
}

impl AuditReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            pass: violations.is_empty(),
            violations,
        }
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn digest(&self) -> AuditDigest {
        let mut counts = BTreeMap::new();
        let mut examples: BTreeMap<ViolationKind, Vec<String>> = BTreeMap::new();
        for v in &self.violations {
            *counts.entry(v.kind).or_insert(0) += 1;
            let ex = examples.entry(v.kind).or_default();
            if ex.len() < 5 {
                ex.push(v.subject.clone());
            }
        }
        AuditDigest {
            pass: self.pass,
            counts,
            examples,
        }
    }
}

/// Everything the audit inspects about one training run.
pub struct TrainingSetup<'a> {
    pub protocol: Protocol,
    /// Graph the training forward passes ran on.
    pub graph: &'a Graph,
    /// Node table aligned with `graph`.
    pub dataset: &'a Dataset,
    /// Fit scope the experiment asked for.
    pub declared_fit_scope: FitScope,
    pub scaler: &'a ScalerStats,
    pub bn_log: &'a BnUpdateLog,
}

/// Reports every leakage channel found; never fails on a leaky setup.
pub fn leakage_audit(setup: &TrainingSetup<'_>) -> Result<AuditReport> {
    let ds = setup.dataset;
    if setup.graph.num_nodes() != ds.num_nodes() {
        return Err(Error::Dimension(format!(
            "audited graph has {} nodes, node table {}",
            setup.graph.num_nodes(),
            ds.num_nodes()
        )));
    }
    let mut violations = Vec::new();
    for i in 0..ds.num_nodes() {
        let t = ds.timestep(i);
        if t >= TEST_MIN_STEP {
            violations.push(Violation {
                kind: ViolationKind::TestNodeInTrainGraph,
                subject: ds.external_ids()[i].to_string(),
                detail: format!("timestep {t}, degree {}", setup.graph.degree(i)),
            });
        }
    }
    if setup.protocol == Protocol::StrictInductive
        && setup.declared_fit_scope == FitScope::TrainOnly
        && setup.scaler.fit_scope == FitScope::FullPopulation
    {
        violations.push(Violation {
            kind: ViolationKind::ScalerSawTestRows,
            subject: "scaler".into(),
            detail: format!(
                "train_only normalisation declared but statistics were fit on {} rows of the full population",
                setup.scaler.fit_rows
            ),
        });
    }
    for u in &setup.bn_log.updates {
        let Some(set) = setup.bn_log.node_sets.get(u.node_set) else {
            continue;
        };
        if !set.test_period_nodes.is_empty() {
            violations.push(Violation {
                kind: ViolationKind::BnStatsUpdatedOnTest,
                subject: format!("bn layer {} epoch {}", u.layer, u.epoch),
                detail: format!(
                    "node set `{}` of {} rows includes {} test-period nodes",
                    set.label,
                    set.rows,
                    set.test_period_nodes.len()
                ),
            });
        }
    }
    Ok(AuditReport::from_violations(violations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{BnUpdate, Matrix, NodeSetDigest};
    use crate::graph::{induce_inductive_subgraph, GraphVariant};
    use crate::ingest::{standardize, Label};

    fn data() -> Dataset {
        Dataset::new(
            vec![1, 2, 3, 4],
            vec![1, 20, 35, 49],
            Matrix::from_fn(4, 2, |i, j| (i + j) as f64),
            vec![Label::Licit, Label::Illicit, Label::Licit, Label::Unknown],
            vec![(0, 1), (1, 2), (2, 3)],
        )
        .unwrap()
    }

    #[test]
    fn clean_inductive_setup_passes_and_transductive_flags_each_test_node() {
        let d = data();
        let g = Graph::from_edges(4, d.edges(), GraphVariant::Original, "").unwrap();
        let (_, scaler) = standardize(&d, FitScope::FullPopulation).unwrap();
        let log = BnUpdateLog::default();
        let sub = induce_inductive_subgraph(&g, &d, 34).unwrap();
        let ok = leakage_audit(&TrainingSetup {
            protocol: Protocol::StrictInductive,
            graph: &sub.graph,
            dataset: &sub.dataset,
            declared_fit_scope: FitScope::FullPopulation,
            scaler: &scaler,
            bn_log: &log,
        })
        .unwrap();
        assert!(ok.pass && ok.violations.is_empty());

        let bad = leakage_audit(&TrainingSetup {
            protocol: Protocol::Transductive,
            graph: &g,
            dataset: &d,
            declared_fit_scope: FitScope::FullPopulation,
            scaler: &scaler,
            bn_log: &log,
        })
        .unwrap();
        assert!(!bad.pass);
        assert_eq!(bad.count(ViolationKind::TestNodeInTrainGraph), 2);
        assert_eq!(
            bad.digest().examples[&ViolationKind::TestNodeInTrainGraph],
            vec!["3", "4"]
        );
    }

    #[test]
    fn scaler_scope_mismatch_and_bn_updates() {
        let d = data();
        let sub = induce_inductive_subgraph(
            &Graph::from_edges(4, d.edges(), GraphVariant::Original, "").unwrap(),
            &d,
            34,
        )
        .unwrap();
        let (_, scaler) = standardize(&d, FitScope::FullPopulation).unwrap();
        let mut log = BnUpdateLog::default();
        let clean = log.register(NodeSetDigest {
            label: "train".into(),
            rows: 2,
            test_period_nodes: vec![],
        });
        let dirty = log.register(NodeSetDigest {
            label: "full".into(),
            rows: 4,
            test_period_nodes: vec![3, 4],
        });
        log.updates.push(BnUpdate {
            epoch: 0,
            layer: 0,
            node_set: clean,
        });
        log.updates.push(BnUpdate {
            epoch: 0,
            layer: 1,
            node_set: dirty,
        });
        let r = leakage_audit(&TrainingSetup {
            protocol: Protocol::StrictInductive,
            graph: &sub.graph,
            dataset: &sub.dataset,
            declared_fit_scope: FitScope::TrainOnly,
            scaler: &scaler,
            bn_log: &log,
        })
        .unwrap();
        assert_eq!(r.count(ViolationKind::ScalerSawTestRows), 1);
        assert_eq!(r.count(ViolationKind::BnStatsUpdatedOnTest), 1);
        assert_eq!(r.count(ViolationKind::TestNodeInTrainGraph), 0);
    }
}
