//! Declarative experiment specs (TOML) and the per-cell configuration that
//! the config hash is computed over.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::SyntheticConfig;
use crate::autodiff::AdamWConfig;
use crate::error::{Error, Result};
use crate::forests::{ForestConfig, LogRegConfig};
use crate::graph::{AugConfig, GraphRecipe, Protocol};
use crate::ingest::{FitScope, MAX_TIMESTEP, MIN_TIMESTEP, TRAIN_MAX_STEP};
use crate::metrics::{MetricKind, TestKind, BOOTSTRAP_RESAMPLES, COST_RATIOS};
use crate::models::{EarlyStopSplit, LossKind, ModelKind, Precision, TrainConfig};

/// Default dataset root when a spec does not name one.
pub const DATA_ENV: &str = "INDUCTIVE_BENCH_DATA";

/// What a condition trains and evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Mlp,
    Gcn,
    Sage,
    Gat,
    RandomForest,
    LogisticRegression,
    /// Convex mix of SAGE and MLP illicit probabilities.
    Fusion,
    /// Random forest on encoder embeddings, optionally with raw features.
    Hybrid,
}

impl ModelChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelChoice::Mlp => "mlp",
            ModelChoice::Gcn => "gcn",
            ModelChoice::Sage => "sage",
            ModelChoice::Gat => "gat",
            ModelChoice::RandomForest => "random_forest",
            ModelChoice::LogisticRegression => "logistic_regression",
            ModelChoice::Fusion => "fusion",
            ModelChoice::Hybrid => "hybrid",
        }
    }

    /// Encoder trained directly by the shared loop.
    pub fn encoder(self) -> Option<ModelKind> {
        match self {
            ModelChoice::Mlp => Some(ModelKind::Mlp),
            ModelChoice::Gcn => Some(ModelKind::Gcn),
            ModelChoice::Sage => Some(ModelKind::Sage),
            ModelChoice::Gat => Some(ModelKind::Gat),
            _ => None,
        }
    }

    /// True when the cell trains at least one neural encoder.
    pub fn trains_encoder(self) -> bool {
        !matches!(
            self,
            ModelChoice::RandomForest | ModelChoice::LogisticRegression
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    #[default]
    All,
    /// The per-transaction columns only.
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HybridEncoder {
    Sage,
    /// The SAGE architecture run on an edgeless graph.
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HybridInputs {
    /// `[embedding ‖ raw features]`.
    EmbeddingRaw,
    Embedding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridSpec {
    pub encoder: HybridEncoder,
    pub inputs: HybridInputs,
}

fn original() -> GraphRecipe {
    GraphRecipe::Original
}

fn train_horizon() -> u8 {
    TRAIN_MAX_STEP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub name: String,
    pub model: ModelChoice,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "original")]
    pub graph: GraphRecipe,
    #[serde(default)]
    pub protocol: Protocol,
    /// Fraud ego-graph augmentation of the training graph.
    #[serde(default)]
    pub augmentation: bool,
    /// Augmentation parameters; the rng seed is replaced by the cell seed.
    #[serde(default)]
    pub aug: Option<AugConfig>,
    /// Overrides the experiment-wide scaler fit scope.
    #[serde(default)]
    pub fit_scope: Option<FitScope>,
    #[serde(default)]
    pub features: FeatureSet,
    #[serde(default)]
    pub hybrid: Option<HybridSpec>,
    #[serde(default)]
    pub fusion_alpha: Option<f64>,
    #[serde(default)]
    pub hidden_dim: Option<usize>,
    /// Last timestep kept in the strict-inductive training graph.
    #[serde(default = "train_horizon")]
    pub graph_horizon: u8,
    #[serde(default)]
    pub forest: Option<ForestConfig>,
    #[serde(default)]
    pub logreg: Option<LogRegConfig>,
    /// Output tables and figure series this condition feeds.
    #[serde(default)]
    pub tables: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    /// Defaults to `{a}_vs_{b}`.
    #[serde(default)]
    pub name: Option<String>,
    pub a: String,
    pub b: String,
    pub test: TestKind,
    #[serde(default)]
    pub metric: Option<MetricKind>,
    #[serde(default)]
    pub tables: Vec<String>,
}

impl ComparisonSpec {
    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("{}_vs_{}", self.a, self.b))
    }

    pub fn metric(&self) -> MetricKind {
        self.metric.unwrap_or(MetricKind::F1)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Directory with the three Elliptic CSV files; falls back to the
    /// `INDUCTIVE_BENCH_DATA` environment variable.
    #[serde(default)]
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub fit_scope: FitScope,
    /// Generated data instead of files.
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    /// Where standardised tables are cached; defaults to `{root}/.cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

/// Training-loop settings shared by every encoder in an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub patience: usize,
    pub warmup_epochs: usize,
    pub early_stop_split: EarlyStopSplit,
    pub precision: Precision,
    pub optimizer: AdamWConfig,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            patience: t.patience,
            warmup_epochs: t.warmup_epochs,
            early_stop_split: t.early_stop_split,
            precision: t.precision,
            optimizer: t.optimizer,
        }
    }
}

/// Dataset-level analyses written next to the records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    /// Node, edge and label counts overall and per timestep.
    DatasetSummary,
    /// Topology of every graph variant used by a condition.
    GraphStats,
    /// MMD and mean-shift of each test step against the training period.
    Drift,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_resamples() -> usize {
    BOOTSTRAP_RESAMPLES
}

fn default_ratios() -> Vec<f64> {
    COST_RATIOS.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Bootstrap resamples for the per-run F1 interval; 0 disables it.
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_ratios")]
    pub cost_ratios: Vec<f64>,
    #[serde(default)]
    pub analyses: Vec<Analysis>,
    pub conditions: Vec<ConditionSpec>,
    #[serde(default)]
    pub comparisons: Vec<ComparisonSpec>,
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Validation(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionSpec> {
        self.conditions.iter().find(|c| c.name == name)
    }

    /// Field-level checks; every message names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !is_identifier(&self.name) {
            return bad(format!(
                "name: {:?} must be non-empty [A-Za-z0-9_-]",
                self.name
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds: the seed list is empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad(format!("seeds: duplicate seeds in {:?}", self.seeds));
        }
        if self.conditions.is_empty() {
            return bad("conditions: at least one condition is required".into());
        }
        if self.training.epochs == 0 {
            return bad("training.epochs: must be positive".into());
        }
        if !(self.training.optimizer.lr > 0.0 && self.training.optimizer.lr.is_finite()) {
            return bad(format!(
                "training.optimizer.lr: {} must be positive",
                self.training.optimizer.lr
            ));
        }
        if let Some(&r) = self
            .cost_ratios
            .iter()
            .find(|r| !(**r >= 1.0 && r.is_finite()))
        {
            return bad(format!(
                "cost_ratios: ratio {r} must be finite and at least 1"
            ));
        }
        if let Some(s) = &self.data.synthetic {
            s.validate()
                .or_else(|e| bad(format!("data.synthetic: {e}")))?;
        }
        let mut names = BTreeSet::new();
        for (i, c) in self.conditions.iter().enumerate() {
            let at = format!("conditions[{i}]");
            if !is_identifier(&c.name) {
                return bad(format!(
                    "{at}.name: {:?} must be non-empty [A-Za-z0-9_-]",
                    c.name
                ));
            }
            if !names.insert(c.name.as_str()) {
                return bad(format!("{at}.name: duplicate condition {:?}", c.name));
            }
            c.validate()
                .or_else(|m| bad(format!("{at} ({}): {m}", c.name)))?;
        }
        for (i, cmp) in self.comparisons.iter().enumerate() {
            let at = format!("comparisons[{i}]");
            for (field, name) in [("a", &cmp.a), ("b", &cmp.b)] {
                if !names.contains(name.as_str()) {
                    return bad(format!(
                        "{at}.{field}: {name:?} is not a declared condition"
                    ));
                }
            }
        }
        Ok(())
    }
}

impl ConditionSpec {
    fn validate(&self) -> std::result::Result<(), String> {
        if !(MIN_TIMESTEP..=MAX_TIMESTEP).contains(&self.graph_horizon) {
            return Err(format!(
                "graph_horizon: {} outside [{MIN_TIMESTEP}, {MAX_TIMESTEP}]",
                self.graph_horizon
            ));
        }
        if (self.model == ModelChoice::Hybrid) != self.hybrid.is_some() {
            return Err("hybrid: required exactly when model = \"hybrid\"".into());
        }
        if self.fusion_alpha.is_some() && self.model != ModelChoice::Fusion {
            return Err("fusion_alpha: only valid when model = \"fusion\"".into());
        }
        if let Some(a) = self.fusion_alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(format!("fusion_alpha: {a} outside [0, 1]"));
            }
        }
        if self.forest.is_some()
            && !matches!(self.model, ModelChoice::RandomForest | ModelChoice::Hybrid)
        {
            return Err("forest: only valid for random_forest and hybrid".into());
        }
        if self.logreg.is_some() && self.model != ModelChoice::LogisticRegression {
            return Err("logreg: only valid for logistic_regression".into());
        }
        if self.model.trains_encoder() {
            if self.hidden_dim == Some(0) {
                return Err("hidden_dim: must be positive".into());
            }
            if self.model == ModelChoice::Hybrid
                && self
                    .hidden_dim
                    .is_some_and(|h| h != crate::models::EMBEDDING_DIM)
            {
                return Err(format!(
                    "hidden_dim: hybrids need {}",
                    crate::models::EMBEDDING_DIM
                ));
            }
        } else {
            if self.augmentation {
                return Err("augmentation: only valid for graph encoders".into());
            }
            if self.hidden_dim.is_some() {
                return Err("hidden_dim: only valid for neural models".into());
            }
        }
        if let Some(a) = &self.aug {
            if !self.augmentation {
                return Err("aug: set augmentation = true to use it".into());
            }
            if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
                return Err(format!(
                    "aug.sigma: {} must be finite and non-negative",
                    a.sigma
                ));
            }
        }
        Ok(())
    }
}

/// Everything that determines one cell's result. Its canonical JSON is
/// what the config hash covers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub experiment: String,
    pub condition: ConditionSpec,
    pub seed: u64,
    pub fit_scope: FitScope,
    pub training: TrainingSpec,
    pub bootstrap_resamples: usize,
    pub cost_ratios: Vec<f64>,
    /// Content hash of the raw node table and edges.
    pub data_hash: String,
}

impl CellConfig {
    pub fn new(
        spec: &ExperimentSpec,
        condition: &ConditionSpec,
        seed: u64,
        data_hash: &str,
    ) -> Self {
        Self {
            experiment: spec.name.clone(),
            condition: condition.clone(),
            seed,
            fit_scope: condition.fit_scope.unwrap_or(spec.data.fit_scope),
            training: spec.training.clone(),
            bootstrap_resamples: spec.bootstrap_resamples,
            cost_ratios: spec.cost_ratios.clone(),
            data_hash: data_hash.to_string(),
        }
    }

    /// SHA-256 of the canonical (sorted-key, compact) JSON encoding.
    pub fn config_hash(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        Ok(hex::encode(Sha256::digest(
            serde_json::to_string(&v)?.as_bytes(),
        )))
    }

    pub fn train_config(&self, loss: LossKind) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            patience: self.training.patience,
            loss,
            warmup_epochs: self.training.warmup_epochs,
            protocol: self.condition.protocol,
            early_stop_split: self.training.early_stop_split,
            seed: self.seed,
            optimizer: self.training.optimizer,
            precision: self.training.precision,
        }
    }
}

/// The spec covering every in-scope table, seeds 0..9.
pub const BENCHMARK_SPEC: &str = include_str!("../../specs/paper.spec");

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
seeds = [0, 1]
[[conditions]]
name = "sage"
model = "sage"
[[conditions]]
name = "rf"
model = "random_forest"
[[comparisons]]
a = "sage"
b = "rf"
test = "welch"
"#;

    #[test]
    fn minimal_spec_fills_defaults() {
        let s = ExperimentSpec::from_toml(MINIMAL).unwrap();
        let c = s.condition("sage").unwrap();
        assert_eq!(c.graph, GraphRecipe::Original);
        assert_eq!(c.protocol, Protocol::StrictInductive);
        assert_eq!(c.loss, LossKind::WeightedCe);
        assert_eq!(c.graph_horizon, 34);
        assert_eq!(s.training.epochs, 200);
        assert_eq!(s.cost_ratios, vec![1.0, 5.0, 10.0, 100.0]);
        assert_eq!(s.comparisons[0].label(), "sage_vs_rf");
    }

    #[test]
    fn default_seed_list_is_zero_to_nine() {
        let s = ExperimentSpec::from_toml(
            "name = \"x\"\n[[conditions]]\nname = \"m\"\nmodel = \"mlp\"\n",
        )
        .unwrap();
        assert_eq!(s.seeds, (0..10).collect::<Vec<u64>>());
    }

    fn err_of(text: &str) -> String {
        match ExperimentSpec::from_toml(text) {
            Err(Error::Validation(m)) => m,
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        assert!(err_of(&MINIMAL.replace("seeds = [0, 1]", "seeds = []")).contains("seeds"));
    }

    #[test]
    fn comparisons_must_reference_declared_conditions() {
        let m = err_of(&MINIMAL.replace("b = \"rf\"", "b = \"gcn\""));
        assert!(m.contains("comparisons[0].b") && m.contains("gcn"), "{m}");
    }

    #[test]
    fn unknown_fields_and_bad_values_name_the_field() {
        assert!(
            err_of(&MINIMAL.replace("model = \"sage\"", "model = \"sage\"\nlayerz = 3"))
                .contains("layerz")
        );
        assert!(
            err_of(&MINIMAL.replace("model = \"sage\"", "model = \"transformer\""))
                .contains("transformer")
        );
        let m =
            err_of(&MINIMAL.replace("model = \"sage\"", "model = \"sage\"\ngraph_horizon = 60"));
        assert!(
            m.contains("conditions[0]") && m.contains("graph_horizon"),
            "{m}"
        );
        let m = err_of(&MINIMAL.replace("model = \"random_forest\"", "model = \"hybrid\""));
        assert!(m.contains("hybrid"), "{m}");
    }

    #[test]
    fn duplicate_condition_names_are_rejected() {
        assert!(err_of(&MINIMAL.replace("name = \"rf\"", "name = \"sage\"")).contains("duplicate"));
    }

    #[test]
    fn config_hash_survives_a_toml_round_trip() {
        let s = ExperimentSpec::from_toml(MINIMAL).unwrap();
        let back = ExperimentSpec::from_toml(&s.to_toml().unwrap()).unwrap();
        assert_eq!(s, back);
        for c in &s.conditions {
            let h1 = CellConfig::new(&s, c, 3, "d").config_hash().unwrap();
            let h2 = CellConfig::new(&back, back.condition(&c.name).unwrap(), 3, "d")
                .config_hash()
                .unwrap();
            assert_eq!(h1, h2);
            assert_eq!(h1.len(), 64);
        }
    }

    #[test]
    fn config_hash_depends_on_seed_and_condition() {
        let s = ExperimentSpec::from_toml(MINIMAL).unwrap();
        let c = &s.conditions[0];
        let h = |seed| CellConfig::new(&s, c, seed, "d").config_hash().unwrap();
        assert_ne!(h(0), h(1));
        let mut c2 = c.clone();
        c2.protocol = Protocol::Transductive;
        assert_ne!(
            h(0),
            CellConfig::new(&s, &c2, 0, "d").config_hash().unwrap()
        );
        assert_ne!(h(0), CellConfig::new(&s, c, 0, "e").config_hash().unwrap());
    }

    #[test]
    fn bundled_spec_is_valid_and_covers_the_tables() {
        let s = ExperimentSpec::from_toml(BENCHMARK_SPEC).unwrap();
        assert_eq!(s.seeds, (0..10).collect::<Vec<u64>>());
        let tags: BTreeSet<&str> = s
            .conditions
            .iter()
            .flat_map(|c| c.tables.iter())
            .chain(s.comparisons.iter().flat_map(|c| c.tables.iter()))
            .map(String::as_str)
            .collect();
        for t in [
            "table5", "table6", "table8", "table9", "table10", "table11", "table12", "table13",
            "fig2", "fig4", "fig5", "fig6",
        ] {
            assert!(tags.contains(t), "no condition feeds {t}");
        }
        assert!(s.comparisons.iter().any(|c| c.test == TestKind::Paired));
    }
}
