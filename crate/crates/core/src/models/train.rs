use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{bind, forward_on_tape, infer, predicts_illicit, Inference};
use super::spec::{ModelSpec, Params};
use crate::autodiff::{
    adamw_step, compute_class_weights, cosine_lr, AdamWConfig, BnRecorder, BnUpdateLog,
    ClassWeights, Matrix, Mode, NodeSetDigest, OptimizerState, Real, Tape,
};
use crate::error::{Error, Result};
use crate::graph::{leakage_audit, AuditReport, Graph, Protocol, TrainingSetup};
use crate::ingest::{Dataset, FitScope, Label, ScalerStats, TEST_MIN_STEP, TRAIN_MAX_STEP};
use crate::metrics::binary_f1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    PlainCe,
    #[default]
    WeightedCe,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopSplit {
    /// Select the epoch with the best test-period F1.
    #[default]
    TestF1PaperFaithful,
    /// Hold out labelled nodes of timesteps 30–34 from the loss and select
    /// on their F1.
    TrainTail,
}

pub const TRAIN_TAIL_FIRST_STEP: u8 = 30;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub loss: LossKind,
    pub warmup_epochs: usize,
    pub protocol: Protocol,
    pub early_stop_split: EarlyStopSplit,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            patience: 40,
            loss: LossKind::WeightedCe,
            warmup_epochs: 20,
            protocol: Protocol::StrictInductive,
            early_stop_split: EarlyStopSplit::TestF1PaperFaithful,
            seed: 0,
            optimizer: AdamWConfig::default(),
            precision: Precision::F32,
        }
    }
}

/// Graphs and node tables for one training run.
pub struct TrainData<'a> {
    /// Graph every training forward pass runs on.
    pub train_graph: Arc<Graph>,
    pub train_dataset: &'a Dataset,
    /// Graph used for test-period inference.
    pub eval_graph: Arc<Graph>,
    pub eval_dataset: &'a Dataset,
    pub scaler: &'a ScalerStats,
    pub declared_fit_scope: FitScope,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub train_f1: f64,
    pub test_f1: f64,
    /// Held-out train-tail F1 when that split is active.
    pub val_f1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub config: TrainConfig,
    /// Parameters and running statistics of the selected epoch.
    pub params: Params,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub class_weights: ClassWeights,
    pub bn_log: BnUpdateLog,
    /// Audit of the finished run, including the batch-norm log.
    pub audit: AuditReport,
    pub train_graph: Arc<Graph>,
    pub train_node_ids: Vec<i64>,
    pub train_node_steps: Vec<u8>,
    pub scaler: ScalerStats,
    pub declared_fit_scope: FitScope,
}

impl TrainedModel {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }

    /// Eval-mode forward pass in the training precision.
    pub fn infer(&self, features: &Matrix<f64>, graph: &Arc<Graph>) -> Result<Inference> {
        match self.config.precision {
            Precision::F32 => infer::<f32>(&self.spec, &self.params, features, graph),
            Precision::F64 => infer::<f64>(&self.spec, &self.params, features, graph),
        }
    }

    /// Re-runs the leakage audit from what the model recorded.
    pub fn reaudit(&self) -> Result<AuditReport> {
        let n = self.train_node_ids.len();
        let ds = Dataset::new(
            self.train_node_ids.clone(),
            self.train_node_steps.clone(),
            Matrix::zeros(n, 0),
            vec![Label::Unknown; n],
            Vec::new(),
        )?;
        leakage_audit(&TrainingSetup {
            protocol: self.config.protocol,
            graph: &self.train_graph,
            dataset: &ds,
            declared_fit_scope: self.declared_fit_scope,
            scaler: &self.scaler,
            bn_log: &self.bn_log,
        })
    }
}

/// Tags numeric failures with the epoch they happened in.
fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
        other => other,
    }
}

fn labeled_rows(ds: &Dataset, lo: u8, hi: u8) -> Vec<usize> {
    ds.rows_where(|t, l| l.is_labeled() && (lo..=hi).contains(&t))
}

fn class_of(ds: &Dataset, rows: &[usize]) -> Vec<usize> {
    rows.iter().map(|&i| ds.label(i).class_index()).collect()
}

fn truth_of(ds: &Dataset, rows: &[usize]) -> Vec<bool> {
    rows.iter().map(|&i| ds.label(i).is_illicit()).collect()
}

fn f1_on(logits: &Matrix<f64>, rows: &[usize], truth: &[bool]) -> f64 {
    let pred = predicts_illicit(&logits.select_rows(rows));
    binary_f1(&pred, truth)
}

/// Full-batch training with AdamW, cosine schedule, warm-up class weights
/// and early stopping. Under the strict inductive protocol the training
/// graph must pass the leakage audit before any step is taken.
pub fn train(spec: &ModelSpec, config: &TrainConfig, data: &TrainData<'_>) -> Result<TrainedModel> {
    match config.precision {
        Precision::F32 => train_impl::<f32>(spec, config, data),
        Precision::F64 => train_impl::<f64>(spec, config, data),
    }
}

fn train_impl<T: Real>(
    spec: &ModelSpec,
    config: &TrainConfig,
    data: &TrainData<'_>,
) -> Result<TrainedModel> {
    spec.validate()?;
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be positive".into()));
    }
    let tds = data.train_dataset;
    let eds = data.eval_dataset;
    for (g, d, what) in [
        (&data.train_graph, tds, "training"),
        (&data.eval_graph, eds, "evaluation"),
    ] {
        if g.num_nodes() != d.num_nodes() {
            return Err(Error::Dimension(format!(
                "{what} graph has {} nodes, node table {}",
                g.num_nodes(),
                d.num_nodes()
            )));
        }
    }

    let pre_log = BnUpdateLog::default();
    let setup = |log| TrainingSetup {
        protocol: config.protocol,
        graph: &data.train_graph,
        dataset: tds,
        declared_fit_scope: data.declared_fit_scope,
        scaler: data.scaler,
        bn_log: log,
    };
    if config.protocol == Protocol::StrictInductive {
        let pre = leakage_audit(&setup(&pre_log))?;
        if !pre.pass {
            let d = pre.digest();
            return Err(Error::Protocol(format!(
                "strict inductive training refused: leakage audit found {} violations {:?}",
                pre.violations.len(),
                d.counts
            )));
        }
    }

    let tail = config.early_stop_split == EarlyStopSplit::TrainTail;
    let loss_hi = if tail {
        TRAIN_TAIL_FIRST_STEP - 1
    } else {
        TRAIN_MAX_STEP
    };
    let train_rows = labeled_rows(tds, 1, loss_hi);
    let val_rows = if tail {
        labeled_rows(tds, TRAIN_TAIL_FIRST_STEP, TRAIN_MAX_STEP)
    } else {
        Vec::new()
    };
    let test_rows = labeled_rows(eds, TEST_MIN_STEP, u8::MAX);
    if train_rows.is_empty() {
        return Err(Error::Config("no labelled training rows".into()));
    }
    if tail && val_rows.is_empty() {
        return Err(Error::Config(
            "train_tail early stopping needs labelled rows in timesteps 30-34".into(),
        ));
    }
    let train_truth = truth_of(tds, &train_rows);
    let val_truth = truth_of(tds, &val_rows);
    let test_truth = truth_of(eds, &test_rows);
    let train_labels: Arc<[usize]> = class_of(tds, &train_rows).into();
    let rows_arc: Arc<[usize]> = train_rows.clone().into();

    let class_weights = match config.loss {
        LossKind::WeightedCe => {
            let c = tds.label_counts_of(&train_rows);
            ClassWeights {
                warmup_epochs: config.warmup_epochs,
                ..compute_class_weights(c.labeled(), c.illicit, c.licit)?
            }
        }
        LossKind::PlainCe => ClassWeights::uniform(),
    };

    let mut params = Params::init(spec, config.seed)?;
    let mut opt = OptimizerState::new(config.optimizer, params.tensors.iter().map(|t| t.len()));
    // Separate stream so initialisation does not depend on dropout draws.
    let mut drop_rng = ChaCha8Rng::seed_from_u64(config.seed);
    drop_rng.set_stream(1);

    let mut bn_log = BnUpdateLog::default();
    let node_set = bn_log.register(NodeSetDigest {
        label: format!("training graph ({})", data.train_graph.variant().as_str()),
        rows: tds.num_nodes(),
        test_period_nodes: tds
            .rows_where(|t, _| t >= TEST_MIN_STEP)
            .into_iter()
            .map(|i| tds.external_ids()[i])
            .collect(),
    });

    let train_x = tds.features().cast::<T>();
    let names: Vec<String> = params.names.clone();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Params)> = None;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.optimizer.lr);
        let (w_ill, w_lic) = class_weights.effective(epoch);
        let mut weights = vec![1.0; spec.head_classes];
        weights[Label::Licit.class_index()] = w_lic;
        weights[Label::Illicit.class_index()] = w_ill;

        let mut tape = Tape::<T>::new();
        let vars = bind(&mut tape, &params, true);
        let x = tape.constant(train_x.clone());
        let mut rec = BnRecorder {
            log: &mut bn_log,
            node_set,
            epoch,
        };
        let out = forward_on_tape(
            spec,
            &vars,
            &mut params.bn,
            &mut tape,
            x,
            &data.train_graph,
            Mode::Train,
            &mut drop_rng,
            Some(&mut rec),
        )
        .map_err(|e| at_epoch(e, epoch))?;
        let loss =
            tape.weighted_ce(out.logits, rows_arc.clone(), train_labels.clone(), &weights)?;
        let loss_value = tape.value(loss).item().f64();
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss at epoch {epoch}"
            )));
        }
        let train_f1 = f1_on(&tape.value(out.logits).cast(), &train_rows, &train_truth);
        let mut grads = tape.backward(loss)?;
        let mut flat: Vec<Vec<f64>> = vars
            .iter()
            .zip(&params.tensors)
            .map(|(&v, t)| match grads.take(v) {
                Some(g) => g.data().iter().map(|x| x.f64()).collect(),
                None => vec![0.0; t.len()],
            })
            .collect();
        drop(grads);
        let mut slices: Vec<&mut [f64]> = params.tensors.iter_mut().map(|t| t.data_mut()).collect();
        adamw_step(&mut slices, &mut flat, &mut opt, lr, &name_refs)
            .map_err(|e| at_epoch(e, epoch))?;

        let test_f1 = if test_rows.is_empty() {
            0.0
        } else {
            let inf = infer::<T>(spec, &params, eds.features(), &data.eval_graph)
                .map_err(|e| at_epoch(e, epoch))?;
            f1_on(&inf.logits, &test_rows, &test_truth)
        };
        let val_f1 = if tail {
            let inf = infer::<T>(spec, &params, tds.features(), &data.train_graph)
                .map_err(|e| at_epoch(e, epoch))?;
            Some(f1_on(&inf.logits, &val_rows, &val_truth))
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            loss: loss_value,
            lr,
            train_f1,
            test_f1,
            val_f1,
        });
        if epoch % 10 == 0 {
            log::debug!(
                "epoch {epoch}: loss {loss_value:.4} train F1 {train_f1:.3} test F1 {test_f1:.3}"
            );
        }

        let score = val_f1.unwrap_or(test_f1);
        if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
            best = Some((score, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    let audit = leakage_audit(&setup(&bn_log))?;
    Ok(TrainedModel {
        spec: spec.clone(),
        config: config.clone(),
        params: best_params,
        history,
        best_epoch,
        class_weights,
        bn_log,
        audit,
        train_graph: data.train_graph.clone(),
        train_node_ids: tds.external_ids().to_vec(),
        train_node_steps: tds.timesteps().to_vec(),
        scaler: data.scaler.clone(),
        declared_fit_scope: data.declared_fit_scope,
    })
}
