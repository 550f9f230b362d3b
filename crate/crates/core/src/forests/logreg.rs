use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::forest::{balanced_weights, ClassWeighting};
use crate::autodiff::{adamw_step, AdamWConfig, Matrix, OptimizerState, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    /// Coefficient of `½‖w‖²` added to the mean loss.
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    pub class_weighting: ClassWeighting,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            epochs: 300,
            lr: 0.05,
            class_weighting: ClassWeighting::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: LogRegConfig,
}

/// L2-regularised logistic regression fit with Adam, full batch. The
/// logit `z = x·w + b` is trained as the two-class softmax over `[0, z]`,
/// which is the logistic model.
pub fn logreg_train(x: &Matrix<f64>, y: &[bool], cfg: &LogRegConfig) -> Result<LogReg> {
    let (n, d) = x.shape();
    if y.len() != n || n == 0 {
        return Err(Error::Dimension(format!("{n} rows for {} labels", y.len())));
    }
    let cw = match cfg.class_weighting {
        ClassWeighting::Balanced => balanced_weights(y),
        ClassWeighting::None => (1.0, 1.0),
    };
    let rows: Arc<[usize]> = (0..n).collect::<Vec<_>>().into();
    let labels: Arc<[usize]> = y.iter().map(|&v| v as usize).collect::<Vec<_>>().into();
    let mut w = Matrix::<f64>::zeros(d, 1);
    let mut b = Matrix::<f64>::zeros(1, 1);
    let mut opt = OptimizerState::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: 0.0,
            max_grad_norm: None,
            ..AdamWConfig::default()
        },
        [d, 1],
    );
    let zeros = Matrix::<f64>::zeros(n, 1);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(w.clone());
        let bv = tape.param(b.clone());
        let z = tape.linear(xv, wv, Some(bv))?;
        let zero = tape.constant(zeros.clone());
        let logits = tape.concat_cols(zero, z)?;
        let ce = tape.weighted_ce(logits, rows.clone(), labels.clone(), &[cw.0, cw.1])?;
        let sq = tape.sum_squares(wv);
        let pen = tape.scale(sq, 0.5 * cfg.l2);
        let loss = tape.add(ce, pen)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Numeric(format!(
                "logistic regression loss diverged at epoch {epoch}"
            )));
        }
        let mut g = tape.backward(loss)?;
        let mut grads = vec![
            g.take(wv)
                .map(|m| m.into_data())
                .unwrap_or_else(|| vec![0.0; d]),
            g.take(bv)
                .map(|m| m.into_data())
                .unwrap_or_else(|| vec![0.0]),
        ];
        let mut params: Vec<&mut [f64]> = vec![w.data_mut(), b.data_mut()];
        adamw_step(
            &mut params,
            &mut grads,
            &mut opt,
            cfg.lr,
            &["weight", "bias"],
        )?;
    }
    Ok(LogReg {
        weights: w.into_data(),
        bias: b.item(),
        config: cfg.clone(),
    })
}

impl LogReg {
    /// Logistic-function illicit probability per row.
    pub fn predict_proba(&self, x: &Matrix<f64>) -> Result<Vec<f64>> {
        if x.cols() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "{} columns for a model with {} weights",
                x.cols(),
                self.weights.len()
            )));
        }
        Ok((0..x.rows())
            .map(|i| {
                let z: f64 = x
                    .row(i)
                    .iter()
                    .zip(&self.weights)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + self.bias;
                1.0 / (1.0 + (-z).exp())
            })
            .collect())
    }
}
