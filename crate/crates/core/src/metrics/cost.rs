use serde::{Deserialize, Serialize};

use super::classify::Confusion;
use crate::error::{Error, Result};

pub const COST_RATIOS: [f64; 4] = [1.0, 5.0, 10.0, 100.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    /// Cost of a missed fraud relative to a false alarm.
    pub ratio: f64,
    /// `(r·FN + FP) / (r·N_fraud + N_licit)`.
    pub normalized_cost: f64,
}

/// Normalised misclassification cost at each ratio. The denominator is the
/// cost of getting every row wrong.
pub fn cost_sweep(pred: &[bool], truth: &[bool], ratios: &[f64]) -> Result<Vec<CostPoint>> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dimension(format!(
            "cost over {} decisions and {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let c = Confusion::from_decisions(pred, truth);
    let n_fraud = (c.tp + c.fn_) as f64;
    let n_licit = (c.fp + c.tn) as f64;
    ratios
        .iter()
        .map(|&r| {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("cost ratio {r} must be positive")));
            }
            Ok(CostPoint {
                ratio: r,
                normalized_cost: (r * c.fn_ as f64 + c.fp as f64) / (r * n_fraud + n_licit),
            })
        })
        .collect()
}
