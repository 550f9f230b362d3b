//! Cell execution. A cell is one (condition, seed) pair; it never panics
//! or errors out of the grid, it records its failure instead.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::data::DataContext;
use super::record::{
    checkpoint_path, record_path, CalibrationSummary, CellStatus, CurvePoint, HistorySummary,
    RunRecord, RECORD_SCHEMA_VERSION,
};
use super::spec::{
    CellConfig, ExperimentSpec, FeatureSet, HybridEncoder, HybridInputs, ModelChoice,
};
use crate::autodiff::{BnUpdateLog, Matrix};
use crate::error::{Error, Result};
use crate::forests::{
    logreg_train, rf_importance_split, rf_predict_proba, rf_train, ForestConfig, ImportanceSplit,
    LogRegConfig,
};
use crate::graph::{
    augment_fraud_egographs, empty_edges, induce_inductive_subgraph, leakage_audit, AuditDigest,
    AugConfig, Graph, GraphRecipe, Protocol, TrainingSetup,
};
use crate::ingest::{
    Dataset, FitScope, ScalerStats, LOCAL_FEATURES, TEST_MIN_STEP, TRAIN_MAX_STEP,
};
use crate::metrics::{
    bootstrap_ci, calibrate, classify_metrics, cost_sweep, per_timestep_metrics, CalibrationReport,
    CostPoint, DecisionRule, MetricBundle, MetricKind, PerStepReport,
};
use crate::models::{
    extract_embeddings, fuse_probabilities, illicit_probabilities, predicts_illicit,
    save_checkpoint, train, ModelKind, ModelSpec, TrainData, TrainedModel, DEFAULT_FUSION_ALPHA,
    TRAIN_TAIL_FIRST_STEP,
};

/// RNG streams derived from the cell seed.
const SHUFFLE_STREAM: u64 = 2;
const BOOTSTRAP_STREAM: u64 = 3;

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Worker threads for the cell grid; 0 uses every core.
    pub jobs: usize,
    /// Reuse an existing successful record whose config hash matches.
    pub resume: bool,
    /// Save the trained encoder next to each record.
    pub checkpoints: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 0,
            resume: true,
            checkpoints: true,
        }
    }
}

/// Deterministic graphs shared by cells, keyed by recipe and fit scope.
pub type GraphCache = BTreeMap<String, std::result::Result<Arc<Graph>, String>>;

fn graph_key(recipe: &GraphRecipe, scope: FitScope) -> String {
    format!(
        "{}|{}",
        serde_json::to_string(recipe).unwrap_or_default(),
        scope.as_str()
    )
}

/// Builds every non-random graph the conditions need, once.
pub fn prebuild_graphs(spec: &ExperimentSpec, ctx: &DataContext) -> GraphCache {
    let mut cache = GraphCache::new();
    for c in spec
        .conditions
        .iter()
        .filter(|c| c.model.trains_encoder() && !c.graph.is_stochastic())
    {
        let scope = c.fit_scope.unwrap_or(spec.data.fit_scope);
        let key = graph_key(&c.graph, scope);
        if cache.contains_key(&key) {
            continue;
        }
        let built = ctx.scaled(scope).and_then(|s| {
            // Deterministic recipes draw nothing from the rng.
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            c.graph.build(&s.dataset, &mut rng)
        });
        if let Ok(g) = &built {
            log::info!(
                "graph {} ({}): {} directed edges",
                c.graph.variant().as_str(),
                scope.as_str(),
                g.directed_edge_count()
            );
        }
        cache.insert(key, built.map(Arc::new).map_err(|e| e.to_string()));
    }
    cache
}

/// Cell failure with the audit report when the audit caused it.
struct CellError {
    error: Error,
    audit: Option<AuditDigest>,
}

impl From<Error> for CellError {
    fn from(error: Error) -> Self {
        Self { error, audit: None }
    }
}

type CellResult<T> = std::result::Result<T, CellError>;

#[derive(Default)]
struct Outcome {
    metrics: Option<MetricBundle>,
    f1_ci: Option<(f64, f64)>,
    per_step: Option<PerStepReport>,
    cost: Vec<CostPoint>,
    calibration: Option<CalibrationSummary>,
    history: Option<HistorySummary>,
    importance: Option<ImportanceSplit>,
    audit: Option<AuditDigest>,
    warnings: Vec<String>,
}

/// Test-row scores with the decisions made from them.
struct Scored {
    scores: Vec<f64>,
    decisions: Vec<bool>,
    /// `None` when decisions are argmax over logits.
    threshold: Option<f64>,
}

impl Scored {
    fn thresholded(scores: Vec<f64>, t: f64) -> Self {
        let decisions = scores.iter().map(|&s| s >= t).collect();
        Self {
            scores,
            decisions,
            threshold: Some(t),
        }
    }
}

struct Cell<'a> {
    ctx: &'a DataContext,
    graphs: &'a GraphCache,
    cfg: &'a CellConfig,
    /// Full node table in the condition's feature set.
    ds: Arc<Dataset>,
    /// Node table the graph recipes are built from.
    graph_ds: Arc<Dataset>,
    scaler: ScalerStats,
    ckpt: Option<PathBuf>,
}

pub fn graph_variant_label(cfg: &CellConfig) -> String {
    let c = &cfg.condition;
    match (c.model, c.hybrid) {
        (ModelChoice::RandomForest | ModelChoice::LogisticRegression, _) => "none".into(),
        (ModelChoice::Hybrid, Some(h)) if h.encoder == HybridEncoder::Mlp => "empty".into(),
        _ => c.graph.variant().as_str().into(),
    }
}

/// Runs one cell, turning errors and panics into a failed record.
pub fn run_cell(
    ctx: &DataContext,
    graphs: &GraphCache,
    cfg: &CellConfig,
    ckpt: Option<PathBuf>,
) -> RunRecord {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| execute(ctx, graphs, cfg, ckpt)));
    let mut rec = RunRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        experiment: cfg.experiment.clone(),
        condition: cfg.condition.name.clone(),
        seed: cfg.seed,
        config_hash: cfg.config_hash().unwrap_or_default(),
        model: cfg.condition.model.as_str().into(),
        protocol: cfg.condition.protocol,
        fit_scope: cfg.fit_scope,
        graph_variant: graph_variant_label(cfg),
        status: CellStatus::Ok,
        error: None,
        metrics: None,
        f1_ci: None,
        per_step: None,
        cost: Vec::new(),
        calibration: None,
        history: None,
        importance: None,
        audit: None,
        warnings: Vec::new(),
        wall_time_s: 0.0,
    };
    match outcome {
        Ok(Ok(o)) => {
            rec.metrics = o.metrics;
            rec.f1_ci = o.f1_ci;
            rec.per_step = o.per_step;
            rec.cost = o.cost;
            rec.calibration = o.calibration;
            rec.history = o.history;
            rec.importance = o.importance;
            rec.audit = o.audit;
            rec.warnings = o.warnings;
        }
        Ok(Err(e)) => {
            rec.status = CellStatus::Failed;
            rec.error = Some(e.error.to_string());
            rec.audit = e.audit;
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            rec.status = CellStatus::Failed;
            rec.error = Some(format!("panic: {msg}"));
        }
    }
    rec.wall_time_s = start.elapsed().as_secs_f64();
    rec
}

fn local_view(ds: &Dataset, scaler: &ScalerStats) -> Result<(Dataset, ScalerStats)> {
    let k = ds.num_features().min(LOCAL_FEATURES);
    let cols = Matrix::from_fn(ds.num_nodes(), k, |i, j| ds.features().get(i, j));
    let s = ScalerStats {
        mean: scaler.mean[..k].to_vec(),
        std: scaler.std[..k].to_vec(),
        ..scaler.clone()
    };
    Ok((ds.with_features(cols)?, s))
}

fn execute(
    ctx: &DataContext,
    graphs: &GraphCache,
    cfg: &CellConfig,
    ckpt: Option<PathBuf>,
) -> CellResult<Outcome> {
    let scaled = ctx.scaled(cfg.fit_scope)?;
    let (ds, scaler) = match cfg.condition.features {
        FeatureSet::All => (scaled.dataset.clone(), scaled.scaler.clone()),
        FeatureSet::Local => {
            let (d, s) = local_view(&scaled.dataset, &scaled.scaler)?;
            (Arc::new(d), s)
        }
    };
    let cell = Cell {
        ctx,
        graphs,
        cfg,
        ds,
        graph_ds: scaled.dataset.clone(),
        scaler,
        ckpt,
    };
    cell.execute()
}

fn hidden(spec: &mut ModelSpec, cfg: &CellConfig) {
    if let Some(h) = cfg.condition.hidden_dim {
        spec.hidden_dim = h;
    }
}

/// A trained encoder with the graph it is evaluated on.
struct Encoder {
    model: TrainedModel,
    eval_graph: Arc<Graph>,
}

impl Cell<'_> {
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    fn test_rows(&self) -> &[usize] {
        &self.ctx.masks.test_labeled
    }

    fn truth(&self, rows: &[usize]) -> Vec<bool> {
        rows.iter()
            .map(|&i| self.ds.label(i).is_illicit())
            .collect()
    }

    fn execute(&self) -> CellResult<Outcome> {
        let mut out = Outcome::default();
        let scored = match self.cfg.condition.model {
            ModelChoice::RandomForest => {
                let x = self.ds.features().clone();
                let (scores, forest) = self.forest_scores(&x)?;
                let boundary = if self.cfg.condition.features == FeatureSet::All {
                    LOCAL_FEATURES
                } else {
                    x.cols()
                };
                out.importance = Some(rf_importance_split(&forest, boundary, x.cols())?);
                Scored::thresholded(scores, 0.5)
            }
            ModelChoice::LogisticRegression => {
                let cfg = self
                    .cfg
                    .condition
                    .logreg
                    .clone()
                    .unwrap_or_else(LogRegConfig::default);
                let (xtr, ytr) = self.train_xy(self.ds.features());
                let m = logreg_train(&xtr, &ytr, &cfg)?;
                Scored::thresholded(
                    m.predict_proba(&self.ds.features().select_rows(self.test_rows()))?,
                    0.5,
                )
            }
            ModelChoice::Mlp | ModelChoice::Gcn | ModelChoice::Sage | ModelChoice::Gat => {
                let kind = self.cfg.condition.model.encoder().expect("encoder kind");
                let mut spec = ModelSpec::reference(kind);
                spec.input_dim = self.ds.num_features();
                hidden(&mut spec, self.cfg);
                let enc = self.train_encoder(&spec, false)?;
                let logits = enc.model.infer(self.ds.features(), &enc.eval_graph)?.logits;
                let (cal, warn) = self.calibration(&logits);
                out.calibration = Some(cal);
                out.warnings.extend(warn);
                self.finish_encoder(&enc, &mut out);
                let test = logits.select_rows(self.test_rows());
                Scored {
                    scores: illicit_probabilities(&test),
                    decisions: predicts_illicit(&test),
                    threshold: None,
                }
            }
            ModelChoice::Fusion => {
                let mut sage = ModelSpec::reference(ModelKind::Sage);
                let mut mlp = ModelSpec::reference(ModelKind::Mlp);
                for s in [&mut sage, &mut mlp] {
                    s.input_dim = self.ds.num_features();
                    hidden(s, self.cfg);
                }
                let g = self.train_encoder(&sage, false)?;
                let m = self.train_encoder(&mlp, false)?;
                let p = |e: &Encoder| -> Result<Vec<f64>> {
                    let l = e.model.infer(self.ds.features(), &e.eval_graph)?.logits;
                    Ok(illicit_probabilities(&l.select_rows(self.test_rows())))
                };
                let alpha = self
                    .cfg
                    .condition
                    .fusion_alpha
                    .unwrap_or(DEFAULT_FUSION_ALPHA);
                let fused = fuse_probabilities(&p(&g)?, &p(&m)?, alpha)?;
                self.finish_encoder(&g, &mut out);
                Scored::thresholded(fused, 0.5)
            }
            ModelChoice::Hybrid => {
                let h = self
                    .cfg
                    .condition
                    .hybrid
                    .ok_or_else(|| Error::Config("hybrid settings missing".into()))?;
                let mut spec = ModelSpec::reference(ModelKind::Sage);
                spec.input_dim = self.ds.num_features();
                spec.head_classes = 2;
                let enc = self.train_encoder(&spec, h.encoder == HybridEncoder::Mlp)?;
                let emb = extract_embeddings(&enc.model, &enc.eval_graph, &self.ds)?;
                let x = match h.inputs {
                    HybridInputs::EmbeddingRaw => emb.hconcat(self.ds.features())?,
                    HybridInputs::Embedding => emb,
                };
                self.finish_encoder(&enc, &mut out);
                Scored::thresholded(self.forest_scores(&x)?.0, 0.5)
            }
        };
        self.evaluate(&scored, &mut out)?;
        Ok(out)
    }

    fn train_xy(&self, x: &Matrix<f64>) -> (Matrix<f64>, Vec<bool>) {
        let rows = &self.ctx.masks.train_labeled;
        (x.select_rows(rows), self.truth(rows))
    }

    fn forest_scores(&self, x: &Matrix<f64>) -> Result<(Vec<f64>, crate::forests::Forest)> {
        let cfg = ForestConfig {
            seed: self.seed(),
            ..self.cfg.condition.forest.clone().unwrap_or_default()
        };
        let (xtr, ytr) = self.train_xy(x);
        let forest = rf_train(&xtr, &ytr, &cfg)?;
        let scores = rf_predict_proba(&forest, &x.select_rows(self.test_rows()))?;
        Ok((scores, forest))
    }

    /// The graph over every node: cached, or resampled per seed for the
    /// shuffled recipe.
    fn full_graph(&self) -> Result<Arc<Graph>> {
        let recipe = &self.cfg.condition.graph;
        if recipe.is_stochastic() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed());
            rng.set_stream(SHUFFLE_STREAM);
            return Ok(Arc::new(recipe.build(&self.graph_ds, &mut rng)?));
        }
        match self.graphs.get(&graph_key(recipe, self.cfg.fit_scope)) {
            Some(Ok(g)) => Ok(g.clone()),
            Some(Err(e)) => Err(Error::Config(format!(
                "graph {} could not be built: {e}",
                recipe.variant().as_str()
            ))),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                Ok(Arc::new(recipe.build(&self.graph_ds, &mut rng)?))
            }
        }
    }

    /// Training graph and node table for the condition's protocol.
    fn training_setup(&self, full: &Arc<Graph>) -> Result<(Arc<Graph>, Cow<'_, Dataset>)> {
        let c = &self.cfg.condition;
        let (g, d): (Arc<Graph>, Cow<'_, Dataset>) = match c.protocol {
            Protocol::StrictInductive => {
                let s = induce_inductive_subgraph(full, &self.ds, c.graph_horizon)?;
                (Arc::new(s.graph), Cow::Owned(s.dataset))
            }
            Protocol::Transductive => (full.clone(), Cow::Borrowed(&*self.ds)),
        };
        if !c.augmentation {
            return Ok((g, d));
        }
        let aug = AugConfig {
            rng_seed: self.seed(),
            ..c.aug.unwrap_or_default()
        };
        let (ag, ad) = augment_fraud_egographs(&g, &d, &aug)?;
        Ok((Arc::new(ag), Cow::Owned(ad)))
    }

    fn train_encoder(&self, spec: &ModelSpec, edgeless: bool) -> CellResult<Encoder> {
        let c = &self.cfg.condition;
        let mut full = self.full_graph()?;
        if edgeless {
            full = Arc::new(empty_edges(&full));
        }
        let (train_graph, train_ds) = self.training_setup(&full)?;
        if c.protocol == Protocol::StrictInductive {
            // Audited here as well as inside training so a refusal keeps
            // the report.
            let report = leakage_audit(&TrainingSetup {
                protocol: c.protocol,
                graph: &train_graph,
                dataset: &train_ds,
                declared_fit_scope: self.cfg.fit_scope,
                scaler: &self.scaler,
                bn_log: &BnUpdateLog::default(),
            })?;
            if !report.pass {
                return Err(CellError {
                    error: Error::Protocol(format!(
                        "strict inductive training refused: leakage audit found {} violations",
                        report.violations.len()
                    )),
                    audit: Some(report.digest()),
                });
            }
        }
        let model = train(
            spec,
            &self.cfg.train_config(c.loss),
            &TrainData {
                train_graph,
                train_dataset: &train_ds,
                eval_graph: full.clone(),
                eval_dataset: &self.ds,
                scaler: &self.scaler,
                declared_fit_scope: self.cfg.fit_scope,
            },
        )?;
        Ok(Encoder {
            model,
            eval_graph: full,
        })
    }

    /// History, audit digest and checkpoint of the cell's primary encoder.
    fn finish_encoder(&self, enc: &Encoder, out: &mut Outcome) {
        let m = &enc.model;
        let last = m.history.last().expect("at least one epoch");
        out.history = Some(HistorySummary {
            early_stop_split: self.cfg.training.early_stop_split,
            epochs_run: m.history.len(),
            best_epoch: m.best_epoch,
            best_test_f1: m.best().test_f1,
            final_train_f1: last.train_f1,
            final_loss: last.loss,
            param_count: m.params.count(),
            curve: m
                .history
                .iter()
                .map(|e| CurvePoint {
                    epoch: e.epoch,
                    loss: e.loss,
                    train_f1: e.train_f1,
                    test_f1: e.test_f1,
                    val_f1: e.val_f1,
                })
                .collect(),
        });
        out.audit = Some(m.audit.digest());
        if let Some(p) = &self.ckpt {
            if let Err(e) = save_checkpoint(m, p) {
                out.warnings.push(format!("checkpoint not saved: {e}"));
            }
        }
    }

    /// Temperature scaling with both calibration-set choices; a set that
    /// cannot be fit becomes a warning.
    fn calibration(&self, logits: &Matrix<f64>) -> (CalibrationSummary, Vec<String>) {
        let masks = &self.ctx.masks;
        let labels = |rows: &[usize]| -> Vec<usize> {
            rows.iter()
                .map(|&i| self.ds.label(i).class_index())
                .collect()
        };
        let mut warnings = Vec::new();
        let mut fit =
            |name: &str, calib: Vec<usize>, eval: Vec<usize>| -> Option<CalibrationReport> {
                let r = calibrate(
                    &logits.select_rows(&calib),
                    &labels(&calib),
                    &logits.select_rows(&eval),
                    &labels(&eval),
                );
                r.map_err(|e| warnings.push(format!("{name} calibration skipped: {e}")))
                    .ok()
            };
        let summary = CalibrationSummary {
            paper_faithful: fit(
                "paper_faithful",
                masks.labeled_in(TEST_MIN_STEP, TEST_MIN_STEP + 1),
                masks.labeled_in(TEST_MIN_STEP + 2, u8::MAX),
            ),
            train_tail: fit(
                "train_tail",
                masks.labeled_in(TRAIN_TAIL_FIRST_STEP, TRAIN_MAX_STEP),
                masks.test_labeled.clone(),
            ),
        };
        (summary, warnings)
    }

    fn evaluate(&self, s: &Scored, out: &mut Outcome) -> Result<()> {
        let rows = self.test_rows();
        if rows.is_empty() {
            return Err(Error::Config("no labelled test rows".into()));
        }
        let truth = self.truth(rows);
        let steps: Vec<u8> = rows.iter().map(|&i| self.ds.timestep(i)).collect();
        let rule = match s.threshold {
            Some(t) => DecisionRule::Threshold(t),
            None => DecisionRule::Given(&s.decisions),
        };
        out.metrics = Some(classify_metrics(&s.scores, &truth, rule)?);
        out.per_step = Some(per_timestep_metrics(&s.scores, &truth, &steps, rule)?);
        out.cost = cost_sweep(&s.decisions, &truth, &self.cfg.cost_ratios)?;
        if self.cfg.bootstrap_resamples > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed());
            rng.set_stream(BOOTSTRAP_STREAM);
            out.f1_ci = Some(bootstrap_ci(
                &s.scores,
                &truth,
                rule,
                MetricKind::F1,
                self.cfg.bootstrap_resamples,
                &mut rng,
            )?);
        }
        Ok(())
    }
}

/// Every (condition, seed) cell of the grid in declaration order.
pub fn cells(spec: &ExperimentSpec, ctx: &DataContext) -> Vec<CellConfig> {
    spec.conditions
        .iter()
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .map(|(c, s)| CellConfig::new(spec, c, s, &ctx.data_hash))
        .collect()
}

/// Runs the grid, writing each record as soon as its cell finishes.
/// Returns one record per (condition, seed) in declaration order.
pub fn run(
    spec: &ExperimentSpec,
    ctx: &DataContext,
    out: &Path,
    opts: &RunOptions,
) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let exp_dir = out.join(&spec.name);
    crate::store::write_atomic(&exp_dir.join("spec.toml"), spec.to_toml()?.as_bytes())?;
    let graphs = prebuild_graphs(spec, ctx);
    super::analysis::run_analyses(spec, ctx, &graphs, &exp_dir);
    let grid = cells(spec, ctx);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunRecord>> = pool.install(|| {
        grid.par_iter()
            .map(|cfg| {
                let name = &cfg.condition.name;
                let path = record_path(out, &spec.name, name, cfg.seed);
                let hash = cfg.config_hash()?;
                if opts.resume {
                    if let Ok(r) = RunRecord::read(&path) {
                        if r.is_ok() && r.config_hash == hash {
                            log::info!("{name} seed {}: reusing {}", cfg.seed, path.display());
                            return Ok(r);
                        }
                    }
                }
                let ckpt = (opts.checkpoints && cfg.condition.model.trains_encoder())
                    .then(|| checkpoint_path(out, &spec.name, name, cfg.seed));
                let rec = run_cell(ctx, &graphs, cfg, ckpt);
                match (&rec.error, rec.f1()) {
                    (Some(e), _) => log::warn!("{name} seed {} failed: {e}", cfg.seed),
                    (None, Some(f1)) => log::info!(
                        "{name} seed {}: F1 {f1:.4} in {:.1}s",
                        cfg.seed,
                        rec.wall_time_s
                    ),
                    _ => {}
                }
                rec.write(&path)?;
                Ok(rec)
            })
            .collect()
    });
    results.into_iter().collect()
}
