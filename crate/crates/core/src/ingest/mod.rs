//! Elliptic transaction tables: parsing, standardisation, temporal splits
//! and summary counts.

mod cache;
mod parse;
mod scale;
mod splits;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub use cache::{input_digest, load_or_build_cache, read_cache, write_cache};
pub use parse::{load_dataset, write_dataset, DataPaths, CLASSES_FILE, EDGES_FILE, FEATURES_FILE};
pub use scale::{standardize, FitScope, ScalerStats};
pub use splits::{dataset_summary, make_splits, SplitMasks, StepSummary, SummaryStats};

pub const NUM_FEATURES: usize = 165;
/// Columns `[0, LOCAL_FEATURES)` are per-transaction; the rest aggregate
/// over one-hop neighbours.
pub const LOCAL_FEATURES: usize = 94;
pub const MIN_TIMESTEP: u8 = 1;
pub const MAX_TIMESTEP: u8 = 49;
/// Last timestep of the training period.
pub const TRAIN_MAX_STEP: u8 = 34;
pub const TEST_MIN_STEP: u8 = 35;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Licit,
    Illicit,
    Unknown,
}

impl Label {
    /// Row of the classifier head for this label.
    pub fn class_index(self) -> usize {
        match self {
            Label::Licit => 0,
            Label::Illicit => 1,
            Label::Unknown => 2,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Licit),
            1 => Some(Label::Illicit),
            2 => Some(Label::Unknown),
            _ => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unknown
    }

    pub fn is_illicit(self) -> bool {
        self == Label::Illicit
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub illicit: usize,
    pub licit: usize,
    pub unknown: usize,
}

impl LabelCounts {
    pub fn labeled(&self) -> usize {
        self.illicit + self.licit
    }

    pub fn total(&self) -> usize {
        self.labeled() + self.unknown
    }

    fn add(&mut self, l: Label) {
        match l {
            Label::Illicit => self.illicit += 1,
            Label::Licit => self.licit += 1,
            Label::Unknown => self.unknown += 1,
        }
    }
}

/// Node table plus undirected transaction edges over dense indices.
///
/// Edges are stored once per unordered pair as `(min, max)` in sorted order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    external_ids: Vec<i64>,
    timesteps: Vec<u8>,
    features: Matrix<f64>,
    labels: Vec<Label>,
    edges: Vec<(u32, u32)>,
    index_of: HashMap<i64, usize>,
}

impl Dataset {
    /// Assembles a dataset, deduplicating edges and dropping self-loops.
    pub fn new(
        external_ids: Vec<i64>,
        timesteps: Vec<u8>,
        features: Matrix<f64>,
        labels: Vec<Label>,
        edges: Vec<(u32, u32)>,
    ) -> Result<Self> {
        let n = external_ids.len();
        if timesteps.len() != n || labels.len() != n || features.rows() != n {
            return Err(Error::Dimension(format!(
                "{n} ids, {} timesteps, {} labels, {} feature rows",
                timesteps.len(),
                labels.len(),
                features.rows()
            )));
        }
        if n > u32::MAX as usize {
            return Err(Error::Config(format!(
                "{n} nodes exceeds the u32 index range"
            )));
        }
        if let Some(&t) = timesteps
            .iter()
            .find(|&&t| !(MIN_TIMESTEP..=MAX_TIMESTEP).contains(&t))
        {
            return Err(Error::Integrity(format!(
                "timestep {t} outside [{MIN_TIMESTEP}, {MAX_TIMESTEP}]"
            )));
        }
        let mut index_of = HashMap::with_capacity(n);
        for (i, &id) in external_ids.iter().enumerate() {
            if index_of.insert(id, i).is_some() {
                return Err(Error::Integrity(format!("duplicate transaction id {id}")));
            }
        }
        let mut canon = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u as usize >= n || v as usize >= n {
                return Err(Error::Integrity(format!(
                    "edge ({u}, {v}) outside {n} nodes"
                )));
            }
            if u != v {
                canon.push((u.min(v), u.max(v)));
            }
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Self {
            external_ids,
            timesteps,
            features,
            labels,
            edges: canon,
            index_of,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.external_ids.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn external_ids(&self) -> &[i64] {
        &self.external_ids
    }

    pub fn timesteps(&self) -> &[u8] {
        &self.timesteps
    }

    pub fn timestep(&self, i: usize) -> u8 {
        self.timesteps[i]
    }

    pub fn features(&self) -> &Matrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn index_of(&self, external_id: i64) -> Option<usize> {
        self.index_of.get(&external_id).copied()
    }

    pub fn label_counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for &l in &self.labels {
            c.add(l);
        }
        c
    }

    pub fn label_counts_of(&self, rows: &[usize]) -> LabelCounts {
        let mut c = LabelCounts::default();
        for &r in rows {
            c.add(self.labels[r]);
        }
        c
    }

    /// Same nodes and edges with replaced features.
    pub fn with_features(&self, features: Matrix<f64>) -> Result<Self> {
        if features.rows() != self.num_nodes() {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                self.num_nodes()
            )));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Sub-dataset over `keep` (in that order); edges survive iff both
    /// endpoints do. Returns the old→new index map.
    pub fn subset(&self, keep: &[usize]) -> Result<(Self, Vec<Option<u32>>)> {
        let mut map = vec![None; self.num_nodes()];
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.num_nodes() {
                return Err(Error::Dimension(format!(
                    "row {old} outside {} nodes",
                    self.num_nodes()
                )));
            }
            if map[old].replace(new as u32).is_some() {
                return Err(Error::Integrity(format!("row {old} selected twice")));
            }
        }
        let edges = self
            .edges
            .iter()
            .filter_map(|&(u, v)| Some((map[u as usize]?, map[v as usize]?)))
            .collect();
        let ds = Self::new(
            keep.iter().map(|&i| self.external_ids[i]).collect(),
            keep.iter().map(|&i| self.timesteps[i]).collect(),
            self.features.select_rows(keep),
            keep.iter().map(|&i| self.labels[i]).collect(),
            edges,
        )?;
        Ok((ds, map))
    }

    /// Appends nodes (and edges among all nodes) after the existing ones.
    pub fn append_nodes(
        &self,
        external_ids: &[i64],
        timesteps: &[u8],
        features: &Matrix<f64>,
        labels: &[Label],
        new_edges: &[(u32, u32)],
    ) -> Result<Self> {
        if features.cols() != self.num_features() {
            return Err(Error::Dimension(format!(
                "appending {} feature columns to {}",
                features.cols(),
                self.num_features()
            )));
        }
        let mut ids = self.external_ids.clone();
        ids.extend_from_slice(external_ids);
        let mut ts = self.timesteps.clone();
        ts.extend_from_slice(timesteps);
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(features.data());
        let feats = Matrix::new(ids.len(), self.num_features(), data)?;
        let mut labels_all = self.labels.clone();
        labels_all.extend_from_slice(labels);
        let mut edges = self.edges.clone();
        edges.extend_from_slice(new_edges);
        Self::new(ids, ts, feats, labels_all, edges)
    }

    /// Hash over ids, timesteps, labels, feature bits and edges.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_nodes() as u64).to_le_bytes());
        h.update((self.num_features() as u64).to_le_bytes());
        for &id in &self.external_ids {
            h.update(id.to_le_bytes());
        }
        h.update(&self.timesteps);
        let labels: Vec<u8> = self.labels.iter().map(|l| l.class_index() as u8).collect();
        h.update(&labels);
        for &x in self.features.data() {
            h.update(x.to_bits().to_le_bytes());
        }
        for &(u, v) in &self.edges {
            h.update(u.to_le_bytes());
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Rows with the given label status and timestep range, ascending.
    pub fn rows_where(&self, pred: impl Fn(u8, Label) -> bool) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| pred(self.timesteps[i], self.labels[i]))
            .collect()
    }
}
