use serde::{Deserialize, Serialize};

use super::classify::binary_f1;
use crate::autodiff::{softmax_into, Matrix};
use crate::error::{Error, Result};
use crate::ingest::Label;

pub const ECE_BINS: usize = 15;
pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 10.0);

fn check(logits: &Matrix<f64>, labels: &[usize]) -> Result<()> {
    if logits.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Config("calibration over an empty set".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::Dimension(format!(
            "label {bad} with {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

fn probabilities(logits: &Matrix<f64>, temperature: f64) -> Matrix<f64> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    let mut scaled = vec![0.0; logits.cols()];
    for i in 0..logits.rows() {
        for (s, &z) in scaled.iter_mut().zip(logits.row(i)) {
            *s = z / temperature;
        }
        softmax_into(&scaled, out.row_mut(i));
    }
    out
}

/// Mean negative log-likelihood of `labels` under `softmax(z / T)`.
pub fn nll(logits: &Matrix<f64>, labels: &[usize], temperature: f64) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
        let lse = row
            .iter()
            .map(|&v| (v / temperature - max).exp())
            .sum::<f64>()
            .ln()
            + max;
        total += lse - row[y] / temperature;
    }
    total / labels.len() as f64
}

/// Expected calibration error over equal-width confidence bins on the
/// top-label probability.
pub fn ece(probs: &Matrix<f64>, labels: &[usize], bins: usize) -> f64 {
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut acc = vec![0.0; bins];
    for (i, &y) in labels.iter().enumerate() {
        let row = probs.row(i);
        let (arg, &p) =
            row.iter().enumerate().fold(
                (0, &row[0]),
                |best, (j, v)| if *v > *best.1 { (j, v) } else { best },
            );
        // Bins are (k/B, (k+1)/B]; confidence 0 joins the first bin.
        let b = ((p * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        count[b] += 1;
        conf[b] += p;
        acc[b] += (arg == y) as u8 as f64;
    }
    let n = labels.len() as f64;
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            (count[b] as f64 / n) * (acc[b] / count[b] as f64 - conf[b] / count[b] as f64).abs()
        })
        .sum()
}

/// Mean squared error of the illicit probability against the illicit
/// indicator.
pub fn brier(probs: &Matrix<f64>, labels: &[usize]) -> f64 {
    let k = Label::Illicit.class_index();
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| (probs.get(i, k) - (y == k) as u8 as f64).powi(2))
        .sum::<f64>()
        / labels.len() as f64
}

fn argmax_illicit(probs: &Matrix<f64>) -> Vec<bool> {
    let k = Label::Illicit.class_index();
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, v)| if *v > row[b] { j } else { b });
            best == k
        })
        .collect()
}

/// Golden-section search for the temperature minimising the NLL.
pub fn fit_temperature_value(logits: &Matrix<f64>, labels: &[usize]) -> Result<f64> {
    check(logits, labels)?;
    let first = labels[0];
    if labels.iter().all(|&y| y == first) {
        return Err(Error::Config(
            "temperature fit needs both classes in the calibration set".into(),
        ));
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = TEMPERATURE_RANGE;
    let f = |t: f64| nll(logits, labels, t);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-6 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    Ok((a + b) / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub temperature: f64,
    pub calibration_rows: usize,
    pub eval_rows: usize,
    pub ece_before: f64,
    pub ece_after: f64,
    pub brier_before: f64,
    pub brier_after: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    /// Argmax F1 after scaling minus before; zero since scaling by a
    /// positive constant keeps the argmax.
    pub delta_f1: f64,
}

/// Fits the temperature on one labelled set and reports calibration on
/// another.
pub fn calibrate(
    calib_logits: &Matrix<f64>,
    calib_labels: &[usize],
    eval_logits: &Matrix<f64>,
    eval_labels: &[usize],
) -> Result<CalibrationReport> {
    check(eval_logits, eval_labels)?;
    let t = fit_temperature_value(calib_logits, calib_labels)?;
    let before = probabilities(eval_logits, 1.0);
    let after = probabilities(eval_logits, t);
    let truth: Vec<bool> = eval_labels
        .iter()
        .map(|&y| y == Label::Illicit.class_index())
        .collect();
    Ok(CalibrationReport {
        temperature: t,
        calibration_rows: calib_labels.len(),
        eval_rows: eval_labels.len(),
        ece_before: ece(&before, eval_labels, ECE_BINS),
        ece_after: ece(&after, eval_labels, ECE_BINS),
        brier_before: brier(&before, eval_labels),
        brier_after: brier(&after, eval_labels),
        nll_before: nll(eval_logits, eval_labels, 1.0),
        nll_after: nll(eval_logits, eval_labels, t),
        delta_f1: binary_f1(&argmax_illicit(&after), &truth)
            - binary_f1(&argmax_illicit(&before), &truth),
    })
}

/// Fit and report on the same rows.
pub fn fit_temperature(logits: &Matrix<f64>, labels: &[usize]) -> Result<CalibrationReport> {
    calibrate(logits, labels, logits, labels)
}
