//! Loading the node table once per experiment, standardised under each fit
//! scope the conditions ask for.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::spec::{DataSpec, ExperimentSpec, DATA_ENV};
use super::synth::synthetic_dataset;
use crate::error::{Error, Result};
use crate::ingest::{
    input_digest, load_or_build_cache, make_splits, standardize, DataPaths, Dataset, FitScope,
    ScalerStats, SplitMasks,
};

#[derive(Clone, Debug)]
pub struct Scaled {
    pub dataset: Arc<Dataset>,
    pub scaler: ScalerStats,
}

/// Immutable inputs shared by every cell.
#[derive(Clone, Debug)]
pub struct DataContext {
    /// Identifies the raw inputs; part of every config hash.
    pub data_hash: String,
    pub masks: SplitMasks,
    scaled: BTreeMap<FitScope, Scaled>,
}

/// Where the dataset comes from after flags and the environment are
/// applied.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Files { root: PathBuf, cache_dir: PathBuf },
    Synthetic(super::synth::SyntheticConfig),
}

impl DataSource {
    /// `data.synthetic`, then `data.root`, then `INDUCTIVE_BENCH_DATA`.
    pub fn resolve(data: &DataSpec) -> Result<Self> {
        if let Some(s) = &data.synthetic {
            return Ok(DataSource::Synthetic(s.clone()));
        }
        let root = match &data.root {
            Some(r) => r.clone(),
            None => std::env::var_os(DATA_ENV)
                .map(PathBuf::from)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "no dataset: set data.root, data.synthetic or {DATA_ENV}"
                    ))
                })?,
        };
        let cache_dir = data
            .cache_dir
            .clone()
            .unwrap_or_else(|| root.join(".cache"));
        Ok(DataSource::Files { root, cache_dir })
    }
}

/// Every fit scope some condition of `spec` uses.
pub fn scopes_of(spec: &ExperimentSpec) -> Vec<FitScope> {
    let mut v: Vec<FitScope> = spec
        .conditions
        .iter()
        .map(|c| c.fit_scope.unwrap_or(spec.data.fit_scope))
        .collect();
    v.sort();
    v.dedup();
    v
}

impl DataContext {
    pub fn load(source: &DataSource, scopes: &[FitScope]) -> Result<Self> {
        match source {
            DataSource::Synthetic(cfg) => Self::from_raw(&synthetic_dataset(cfg)?, scopes),
            DataSource::Files { root, cache_dir } => Self::from_files(root, cache_dir, scopes),
        }
    }

    pub fn from_raw(raw: &Dataset, scopes: &[FitScope]) -> Result<Self> {
        if scopes.is_empty() {
            return Err(Error::Config("no fit scope requested".into()));
        }
        let mut scaled = BTreeMap::new();
        for &s in scopes {
            let (ds, scaler) = standardize(raw, s)?;
            scaled.insert(
                s,
                Scaled {
                    dataset: Arc::new(ds),
                    scaler,
                },
            );
        }
        Ok(Self {
            data_hash: raw.content_hash(),
            masks: make_splits(raw),
            scaled,
        })
    }

    fn from_files(root: &Path, cache_dir: &Path, scopes: &[FitScope]) -> Result<Self> {
        let paths = DataPaths::from_root(root)?;
        let mut scaled = BTreeMap::new();
        let mut masks = None;
        for &s in scopes {
            let (ds, scaler, path) = load_or_build_cache(&paths, s, cache_dir)?;
            log::info!("dataset ({}) from {}", s.as_str(), path.display());
            masks.get_or_insert_with(|| make_splits(&ds));
            scaled.insert(
                s,
                Scaled {
                    dataset: Arc::new(ds),
                    scaler,
                },
            );
        }
        let masks = masks.ok_or_else(|| Error::Config("no fit scope requested".into()))?;
        Ok(Self {
            data_hash: input_digest(&paths, FitScope::FullPopulation)?,
            masks,
            scaled,
        })
    }

    pub fn scaled(&self, scope: FitScope) -> Result<&Scaled> {
        self.scaled.get(&scope).ok_or_else(|| {
            Error::Config(format!(
                "dataset was not prepared for fit scope {}",
                scope.as_str()
            ))
        })
    }

    /// Any prepared dataset; labels, timesteps and edges do not depend on
    /// the scope.
    pub fn any(&self) -> &Scaled {
        self.scaled.values().next().expect("at least one scope")
    }
}
