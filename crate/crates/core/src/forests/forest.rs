use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Sample, Tree, TreeParams};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::ingest::LOCAL_FEATURES;
use crate::store::write_atomic;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// `n / (2·n_c)` per class, computed once on the full training set.
    #[default]
    Balanced,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub class_weighting: ClassWeighting,
    /// Candidate features per split; `None` means floor(sqrt(d)).
    pub features_per_split: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 300,
            class_weighting: ClassWeighting::Balanced,
            features_per_split: None,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn max_features(&self, d: usize) -> Result<usize> {
        let m = self
            .features_per_split
            .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1));
        if d == 0 || !(1..=d).contains(&m) {
            return Err(Error::Config(format!(
                "features_per_split {m} outside [1, {d}]"
            )));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Mean impurity decrease per feature, normalised to sum to 1.
    pub feature_importances: Vec<f64>,
    /// Class weights used as (licit, illicit).
    pub class_weights: (f64, f64),
}

pub fn balanced_weights(y: &[bool]) -> (f64, f64) {
    let n = y.len() as f64;
    let n1 = y.iter().filter(|&&v| v).count() as f64;
    let n0 = n - n1;
    let w = |c: f64| if c > 0.0 { n / (2.0 * c) } else { 0.0 };
    (w(n0), w(n1))
}

fn normalise(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else if !v.is_empty() {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Per-tree generator: the run seed on stream `tree`.
fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(tree as u64);
    r
}

/// Class-weighted random forest on binary labels (`true` = illicit).
pub fn rf_train(x: &Matrix<f64>, y: &[bool], cfg: &ForestConfig) -> Result<Forest> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} rows for {} labels", y.len())));
    }
    if n == 0 {
        return Err(Error::Config(
            "random forest on an empty training set".into(),
        ));
    }
    if cfg.n_trees == 0 {
        return Err(Error::Config("n_trees must be at least 1".into()));
    }
    if cfg.min_samples_split < 2 {
        return Err(Error::Config("min_samples_split must be at least 2".into()));
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "random forest input contains non-finite values".into(),
        ));
    }
    let max_features = cfg.max_features(d)?;
    let class_weights = match cfg.class_weighting {
        ClassWeighting::Balanced => balanced_weights(y),
        ClassWeighting::None => (1.0, 1.0),
    };
    let n1 = y.iter().filter(|&&v| v).count();
    if n1 == 0 || n1 == n {
        log::warn!("random forest trained on a single class; every tree is one leaf");
    }
    let params = TreeParams {
        max_features,
        max_depth: cfg.max_depth,
        min_samples_split: cfg.min_samples_split,
    };
    let grown: Vec<(Tree, Vec<f64>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(cfg.seed, t);
            let mut counts = vec![0u32; n];
            if cfg.bootstrap {
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
            } else {
                counts.iter_mut().for_each(|c| *c = 1);
            }
            let rows: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
            let weight = rows
                .iter()
                .map(|&i| {
                    counts[i] as f64
                        * if y[i] {
                            class_weights.1
                        } else {
                            class_weights.0
                        }
                })
                .collect();
            let sample = Sample { x, y, rows, weight };
            let mut imp = vec![0.0; d];
            let tree = Tree::grow(&sample, &params, &mut imp, &mut rng);
            normalise_tree(&mut imp);
            (tree, imp)
        })
        .collect();
    let mut importances = vec![0.0; d];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, imp) in grown {
        for (a, b) in importances.iter_mut().zip(&imp) {
            *a += b;
        }
        trees.push(tree);
    }
    normalise(&mut importances);
    Ok(Forest {
        config: cfg.clone(),
        n_features: d,
        trees,
        feature_importances: importances,
        class_weights,
    })
}

/// Trees without splits contribute nothing to the importance average.
fn normalise_tree(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// Mean over trees of the illicit fraction in the leaf each row reaches.
pub fn rf_predict_proba(forest: &Forest, x: &Matrix<f64>) -> Result<Vec<f64>> {
    if forest.trees.is_empty() {
        return Err(Error::Config("cannot predict with an empty forest".into()));
    }
    if x.cols() != forest.n_features {
        return Err(Error::Dimension(format!(
            "{} columns for a forest trained on {}",
            x.cols(),
            forest.n_features
        )));
    }
    let k = forest.trees.len() as f64;
    Ok((0..x.rows())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            forest.trees.iter().map(|t| t.predict(row)).sum::<f64>() / k
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSplit {
    /// Share of importance in columns below the boundary.
    pub local_share: f64,
    pub aggregate_share: f64,
    /// Highest-importance columns, descending; ties by index.
    pub top: Vec<(usize, f64)>,
}

pub const DEFAULT_LOCAL_BOUNDARY: usize = LOCAL_FEATURES;

pub fn rf_importance_split(
    forest: &Forest,
    local_boundary: usize,
    top_k: usize,
) -> Result<ImportanceSplit> {
    importance_split(&forest.feature_importances, local_boundary, top_k)
}

pub fn importance_split(
    importances: &[f64],
    local_boundary: usize,
    top_k: usize,
) -> Result<ImportanceSplit> {
    let d = importances.len();
    if local_boundary > d {
        return Err(Error::Config(format!(
            "importance boundary {local_boundary} outside [0, {d}]"
        )));
    }
    let total: f64 = importances.iter().sum();
    let local: f64 = importances[..local_boundary].iter().sum();
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    let (ls, as_) = if total > 0.0 {
        (local / total, 1.0 - local / total)
    } else {
        (0.0, 0.0)
    };
    Ok(ImportanceSplit {
        local_share: ls,
        aggregate_share: as_,
        top: idx
            .into_iter()
            .take(top_k)
            .map(|i| (i, importances[i]))
            .collect(),
    })
}

impl Forest {
    pub fn validate(&self) -> Result<()> {
        if self.trees.iter().any(|t| !t.validate(self.n_features)) {
            return Err(Error::Format("forest contains a malformed tree".into()));
        }
        if self.feature_importances.len() != self.n_features {
            return Err(Error::Format(
                "importance vector length does not match the feature count".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: Forest =
            serde_json::from_slice(&std::fs::read(path).map_err(|e| Error::io(path, e))?)?;
        f.validate()?;
        Ok(f)
    }
}
