use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, LabelCounts, TEST_MIN_STEP, TRAIN_MAX_STEP};
use crate::error::{Error, Result};

/// Labeled rows of the training and test periods.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train_labeled: Vec<usize>,
    pub test_labeled: Vec<usize>,
    /// Labeled rows per timestep, for every timestep that has any.
    pub per_step: BTreeMap<u8, Vec<usize>>,
}

impl SplitMasks {
    /// Test steps in ascending order with their labeled rows.
    pub fn test_steps(&self) -> impl Iterator<Item = (u8, &[usize])> {
        self.per_step
            .range(TEST_MIN_STEP..)
            .map(|(&t, rows)| (t, rows.as_slice()))
    }

    /// Labeled rows with timestep in `lo..=hi`.
    pub fn labeled_in(&self, lo: u8, hi: u8) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .per_step
            .range(lo..=hi)
            .flat_map(|(_, r)| r.iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    }
}

pub fn make_splits(dataset: &Dataset) -> SplitMasks {
    let mut per_step: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..dataset.num_nodes() {
        if !dataset.label(i).is_labeled() {
            continue;
        }
        let t = dataset.timestep(i);
        per_step.entry(t).or_default().push(i);
        if t <= TRAIN_MAX_STEP {
            train.push(i);
        } else {
            test.push(i);
        }
    }
    SplitMasks {
        train_labeled: train,
        test_labeled: test,
        per_step,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub timestep: u8,
    pub nodes: usize,
    pub labeled: usize,
    pub illicit: usize,
    pub licit: usize,
    pub unknown: usize,
    /// Illicit share of labeled nodes; 0 when nothing is labeled.
    pub illicit_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub nodes: usize,
    pub undirected_edges: usize,
    pub totals: LabelCounts,
    pub train: LabelCounts,
    pub test: LabelCounts,
    pub train_illicit_rate: f64,
    /// Licit per illicit in the training period.
    pub train_imbalance_ratio: f64,
    pub steps: Vec<StepSummary>,
}

fn rate(c: &LabelCounts) -> f64 {
    if c.labeled() == 0 {
        0.0
    } else {
        c.illicit as f64 / c.labeled() as f64
    }
}

pub fn dataset_summary(dataset: &Dataset, masks: &SplitMasks) -> SummaryStats {
    let mut by_step: BTreeMap<u8, LabelCounts> = BTreeMap::new();
    for i in 0..dataset.num_nodes() {
        let c = by_step.entry(dataset.timestep(i)).or_default();
        match dataset.label(i) {
            super::Label::Illicit => c.illicit += 1,
            super::Label::Licit => c.licit += 1,
            super::Label::Unknown => c.unknown += 1,
        }
    }
    let steps = by_step
        .iter()
        .map(|(&t, c)| StepSummary {
            timestep: t,
            nodes: c.total(),
            labeled: c.labeled(),
            illicit: c.illicit,
            licit: c.licit,
            unknown: c.unknown,
            illicit_rate: rate(c),
        })
        .collect();
    let train = dataset.label_counts_of(&masks.train_labeled);
    let test = dataset.label_counts_of(&masks.test_labeled);
    let ratio = if train.illicit == 0 {
        f64::INFINITY
    } else {
        train.licit as f64 / train.illicit as f64
    };
    SummaryStats {
        nodes: dataset.num_nodes(),
        undirected_edges: dataset.edges().len(),
        totals: dataset.label_counts(),
        train,
        test,
        train_illicit_rate: rate(&train),
        train_imbalance_ratio: ratio,
        steps,
    }
}

impl SummaryStats {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record([
            "timestep",
            "nodes",
            "labeled",
            "illicit",
            "licit",
            "unknown",
            "illicit_rate",
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
        for s in &self.steps {
            w.write_record([
                s.timestep.to_string(),
                s.nodes.to_string(),
                s.labeled.to_string(),
                s.illicit.to_string(),
                s.licit.to_string(),
                s.unknown.to_string(),
                format!("{:.6}", s.illicit_rate),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        let mut inner = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        inner.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::ingest::Label;

    fn fixture(steps: &[u8], labels: &[Label]) -> Dataset {
        let n = steps.len();
        Dataset::new(
            (0..n as i64).collect(),
            steps.to_vec(),
            Matrix::zeros(n, 1),
            labels.to_vec(),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn masks_partition_labeled_rows() {
        use Label::*;
        let d = fixture(
            &[1, 34, 35, 35, 49, 20],
            &[Illicit, Licit, Licit, Unknown, Illicit, Unknown],
        );
        let m = make_splits(&d);
        assert_eq!(m.train_labeled, vec![0, 1]);
        assert_eq!(m.test_labeled, vec![2, 4]);
        let from_steps: Vec<usize> = m.test_steps().flat_map(|(_, r)| r.to_vec()).collect();
        assert_eq!(from_steps, m.test_labeled);
        assert_eq!(m.labeled_in(30, 35), vec![1, 2]);
    }

    #[test]
    fn all_test_period_nodes_give_empty_train_mask() {
        let d = fixture(&[40, 40, 40], &[Label::Illicit, Label::Licit, Label::Licit]);
        assert!(make_splits(&d).train_labeled.is_empty());
    }

    #[test]
    fn balanced_fixture_has_unit_ratio() {
        use Label::*;
        let d = fixture(&[1, 2, 3, 4], &[Illicit, Illicit, Licit, Licit]);
        let s = dataset_summary(&d, &make_splits(&d));
        assert_eq!(s.train_imbalance_ratio, 1.0);
        assert_eq!(s.train_illicit_rate, 0.5);
        assert_eq!(s.steps.len(), 4);
    }

    #[test]
    fn summary_csv_has_one_row_per_step() {
        use Label::*;
        let d = fixture(&[1, 1, 40], &[Illicit, Licit, Unknown]);
        let s = dataset_summary(&d, &make_splits(&d));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("steps.csv");
        s.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("1,2,2,1,1,0,0.500000"));
    }
}
