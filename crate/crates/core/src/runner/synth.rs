//! Small Elliptic-shaped datasets for smoke runs and tests: 49 timesteps,
//! a falling fraud rate after the collapse step, within-step edges and
//! class-dependent local features.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::ingest::{Dataset, Label, LOCAL_FEATURES, MAX_TIMESTEP, NUM_FEATURES, TEST_MIN_STEP};
use crate::models::TRAIN_TAIL_FIRST_STEP;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub nodes: usize,
    pub features: usize,
    pub seed: u64,
    /// Fraction of nodes that carry a label.
    pub labeled_rate: f64,
    /// Illicit share among labelled nodes before the collapse step.
    pub illicit_rate: f64,
    /// First timestep with the reduced fraud rate and shifted signal.
    pub collapse_step: u8,
    pub mean_degree: f64,
    /// Mean shift of the informative columns for illicit nodes.
    pub signal: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            nodes: 2000,
            features: NUM_FEATURES,
            seed: 0,
            labeled_rate: 0.4,
            illicit_rate: 0.2,
            collapse_step: 43,
            mean_degree: 2.3,
            signal: 1.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.nodes < 2 * MAX_TIMESTEP as usize {
            return Err(format!(
                "nodes: {} is below {} (two per timestep)",
                self.nodes,
                2 * MAX_TIMESTEP
            ));
        }
        if self.features < 2 {
            return Err(format!("features: {} must be at least 2", self.features));
        }
        for (name, v) in [
            ("labeled_rate", self.labeled_rate),
            ("illicit_rate", self.illicit_rate),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("{name}: {v} outside (0, 1)"));
            }
        }
        if !(TEST_MIN_STEP..=MAX_TIMESTEP).contains(&self.collapse_step) {
            return Err(format!(
                "collapse_step: {} outside [{TEST_MIN_STEP}, {MAX_TIMESTEP}]",
                self.collapse_step
            ));
        }
        if !(self.mean_degree >= 0.0 && self.mean_degree.is_finite()) {
            return Err(format!(
                "mean_degree: {} must be finite and non-negative",
                self.mean_degree
            ));
        }
        if !self.signal.is_finite() {
            return Err("signal: must be finite".into());
        }
        Ok(())
    }
}

/// Number of columns carrying the class signal.
const INFORMATIVE: usize = 8;

/// Deterministic in `cfg`. Both classes are guaranteed to appear among the
/// labelled nodes of the training period, of the test period, of steps
/// 30–34 and of the first two test steps.
pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate().map_err(Error::Config)?;
    let n = cfg.nodes;
    let d = cfg.features;
    let local = d.min(LOCAL_FEATURES);
    let steps = MAX_TIMESTEP as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let timesteps: Vec<u8> = (0..n).map(|i| (1 + i * steps / n) as u8).collect();
    let mut labels: Vec<Label> = timesteps
        .iter()
        .map(|&t| {
            if rng.random::<f64>() >= cfg.labeled_rate {
                return Label::Unknown;
            }
            let rate = if t >= cfg.collapse_step {
                cfg.illicit_rate / 20.0
            } else {
                cfg.illicit_rate
            };
            if rng.random::<f64>() < rate {
                Label::Illicit
            } else {
                Label::Licit
            }
        })
        .collect();
    let first_of = |t: u8| timesteps.iter().position(|&s| s == t).unwrap_or(0);
    // Two nodes per step exist, so each fix-up slot is distinct.
    for (step, l) in [
        (1, Label::Illicit),
        (2, Label::Licit),
        (TRAIN_TAIL_FIRST_STEP, Label::Illicit),
        (TEST_MIN_STEP, Label::Illicit),
        (TEST_MIN_STEP + 1, Label::Licit),
        (MAX_TIMESTEP, Label::Licit),
    ] {
        let i = first_of(step);
        labels[i] = l;
        if l == Label::Illicit {
            labels[i + 1] = Label::Licit;
        }
    }

    let mut x = Matrix::<f64>::zeros(n, d);
    for i in 0..n {
        let t = timesteps[i];
        let late = t >= cfg.collapse_step;
        let row = x.row_mut(i);
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        // Slow drift on the first column.
        row[0] += 0.02 * t as f64;
        if labels[i] == Label::Illicit {
            // After the collapse the signal moves to other columns.
            let offset = if late { INFORMATIVE } else { 0 };
            for j in 0..INFORMATIVE.min(local) {
                row[(offset + j + 1) % local] += cfg.signal;
            }
        }
        for j in local..d {
            row[j] = 0.5 * row[(j - local) % local] + 0.5 * row[j];
        }
    }

    let mut by_step: Vec<Vec<u32>> = vec![Vec::new(); steps + 1];
    for (i, &t) in timesteps.iter().enumerate() {
        by_step[t as usize].push(i as u32);
    }
    let n_edges = (n as f64 * cfg.mean_degree / 2.0).round() as usize;
    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let u = rng.random_range(0..n);
        if let Some(&v) = by_step[timesteps[u] as usize].choose(&mut rng) {
            edges.push((u as u32, v));
        }
    }
    let ids = (0..n as i64).map(|i| 1000 + 7 * i).collect();
    Dataset::new(ids, timesteps, x, labels, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{make_splits, TRAIN_MAX_STEP};

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = SyntheticConfig {
            nodes: 300,
            ..Default::default()
        };
        let a = synthetic_dataset(&cfg).unwrap();
        let b = synthetic_dataset(&cfg).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.num_features(), NUM_FEATURES);
        assert!((1..=49).all(|t| a.timesteps().contains(&t)));
        for &(u, v) in a.edges() {
            assert_eq!(a.timestep(u as usize), a.timestep(v as usize));
        }
        let other = synthetic_dataset(&SyntheticConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.content_hash(), other.content_hash());
    }

    #[test]
    fn both_classes_in_every_period() {
        for seed in 0..20 {
            let ds = synthetic_dataset(&SyntheticConfig {
                nodes: 100,
                seed,
                ..Default::default()
            })
            .unwrap();
            let m = make_splits(&ds);
            for rows in [
                m.train_labeled.clone(),
                m.test_labeled.clone(),
                m.labeled_in(35, 36),
                m.labeled_in(30, TRAIN_MAX_STEP),
            ] {
                let c = ds.label_counts_of(&rows);
                assert!(c.illicit > 0 && c.licit > 0, "seed {seed}: {c:?}");
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(synthetic_dataset(&SyntheticConfig {
            nodes: 10,
            ..Default::default()
        })
        .is_err());
        assert!(synthetic_dataset(&SyntheticConfig {
            illicit_rate: 1.0,
            ..Default::default()
        })
        .is_err());
    }
}
