use serde::{Deserialize, Serialize};

use super::{Dataset, TRAIN_MAX_STEP};
use crate::autodiff::Matrix;
use crate::error::Result;

/// Which rows the scaler statistics are estimated on.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum FitScope {
    /// Every node, labeled or not, from every timestep.
    #[default]
    FullPopulation,
    /// Nodes with timestep ≤ 34 only.
    TrainOnly,
}

impl FitScope {
    pub fn as_str(self) -> &'static str {
        match self {
            FitScope::FullPopulation => "full_population",
            FitScope::TrainOnly => "train_only",
        }
    }
}

/// Per-column z-score parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1.0 for constant columns.
    pub std: Vec<f64>,
    pub fit_scope: FitScope,
    pub fit_rows: usize,
}

impl ScalerStats {
    /// Column statistics over the given rows of `x`.
    pub fn fit(x: &Matrix<f64>, rows: &[usize], fit_scope: FitScope) -> Self {
        let d = x.cols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                // Rounding leaves constant columns with a tiny spread.
                if sd <= 1e-12 * m.abs().max(1.0) {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self {
            mean,
            std,
            fit_scope,
            fit_rows: rows.len(),
        }
    }

    pub fn transform(&self, x: &Matrix<f64>) -> Matrix<f64> {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn inverse(&self, z: &Matrix<f64>) -> Matrix<f64> {
        let mut out = z.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        out
    }
}

/// Z-scores every feature column, with statistics from the rows selected by
/// `fit_scope`, and applies the transform to all rows.
pub fn standardize(dataset: &Dataset, fit_scope: FitScope) -> Result<(Dataset, ScalerStats)> {
    let rows: Vec<usize> = match fit_scope {
        FitScope::FullPopulation => (0..dataset.num_nodes()).collect(),
        FitScope::TrainOnly => dataset.rows_where(|t, _| t <= TRAIN_MAX_STEP),
    };
    let stats = ScalerStats::fit(dataset.features(), &rows, fit_scope);
    let out = dataset.with_features(stats.transform(dataset.features()))?;
    Ok((out, stats))
}
