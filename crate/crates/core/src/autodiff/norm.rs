//! Batch normalisation and dropout as used by the encoders, plus the log of
//! running-statistic updates that the leakage audit consumes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{BatchMoments, NormSource};
use super::{Real, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    fn update<T: Real>(&mut self, m: &BatchMoments<T>) {
        let k = self.momentum;
        for (r, b) in self.mean.iter_mut().zip(&m.mean) {
            *r = (1.0 - k) * *r + k * b.f64();
        }
        for (r, b) in self.var.iter_mut().zip(&m.var_unbiased) {
            *r = (1.0 - k) * *r + k * b.f64();
        }
    }
}

/// The node population a training forward pass normalised over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSetDigest {
    pub label: String,
    pub rows: usize,
    /// External ids of rows whose timestep falls in the test period.
    pub test_period_nodes: Vec<i64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnUpdate {
    pub epoch: usize,
    pub layer: usize,
    pub node_set: usize,
}

/// Every running-statistic update made during training, with the node set
/// that produced it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BnUpdateLog {
    pub node_sets: Vec<NodeSetDigest>,
    pub updates: Vec<BnUpdate>,
}

impl BnUpdateLog {
    pub fn register(&mut self, digest: NodeSetDigest) -> usize {
        if let Some(i) = self.node_sets.iter().position(|d| *d == digest) {
            return i;
        }
        self.node_sets.push(digest);
        self.node_sets.len() - 1
    }
}

/// Where a training-mode forward pass should record its updates.
pub struct BnRecorder<'a> {
    pub log: &'a mut BnUpdateLog,
    pub node_set: usize,
    pub epoch: usize,
}

fn record(rec: Option<&mut BnRecorder<'_>>, layer: usize) {
    if let Some(rec) = rec {
        let u = BnUpdate {
            epoch: rec.epoch,
            layer,
            node_set: rec.node_set,
        };
        rec.log.updates.push(u);
    }
}

/// Batch norm over all rows. Training mode normalises with batch moments and
/// updates `running`; eval mode uses `running` and leaves it untouched.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    mode: Mode,
    running: &mut RunningStats,
    recorder: Option<&mut BnRecorder<'_>>,
    layer: usize,
) -> Result<Var> {
    let (mean, var) = running_as::<T>(running);
    let source = match mode {
        Mode::Train => NormSource::Batch,
        Mode::Eval => NormSource::Running {
            mean: &mean,
            var: &var,
        },
    };
    let (y, moments) = tape.batch_norm(x, gamma, beta, source, running.eps)?;
    if let Some(m) = moments {
        running.update(&m);
        record(recorder, layer);
    }
    Ok(y)
}

/// `dropout(relu(batch_norm(x)))` fused into one tape node.
#[allow(clippy::too_many_arguments)]
pub fn bn_relu_dropout<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    mode: Mode,
    running: &mut RunningStats,
    p: f64,
    rng: &mut R,
    recorder: Option<&mut BnRecorder<'_>>,
    layer: usize,
) -> Result<Var> {
    check_p(p)?;
    let (mean, var) = running_as::<T>(running);
    let (source, keep) = match mode {
        Mode::Train => {
            let keep = (p > 0.0).then(|| (dropout_mask(tape.value(x).len(), p, rng), p));
            (NormSource::Batch, keep)
        }
        Mode::Eval => (
            NormSource::Running {
                mean: &mean,
                var: &var,
            },
            None,
        ),
    };
    let (y, moments) = tape.bn_relu_dropout(x, gamma, beta, source, running.eps, keep)?;
    if let Some(m) = moments {
        running.update(&m);
        record(recorder, layer);
    }
    Ok(y)
}

fn running_as<T: Real>(r: &RunningStats) -> (Vec<T>, Vec<T>) {
    (
        r.mean.iter().map(|&v| T::of(v)).collect(),
        r.var.iter().map(|&v| T::of(v)).collect(),
    )
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Keep-mask with each entry kept independently with probability `1 − p`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<bool> {
    (0..len).map(|_| rng.random::<f64>() >= p).collect()
}

/// Inverted dropout: identity in eval mode or when `p = 0`.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    x: Var,
    p: f64,
    rng: &mut R,
    mode: Mode,
) -> Result<Var> {
    check_p(p)?;
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x);
    }
    let keep = dropout_mask(tape.value(x).len(), p, rng);
    tape.dropout(x, keep, p)
}
