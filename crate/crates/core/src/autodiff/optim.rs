use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: Some(1.0),
        }
    }
}

/// Moment accumulators for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = shapes.into_iter().collect();
        Self {
            config,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scales gradients in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / (norm + 1e-6);
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// One AdamW update with decoupled weight decay and bias correction.
/// `lr` overrides the configured base rate (the schedule owns it).
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &mut [Vec<f64>],
    state: &mut OptimizerState,
    lr: f64,
    names: &[&str],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Dimension(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            let name = names.get(i).copied().unwrap_or("?");
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter `{name}`"
            )));
        }
    }
    let cfg = state.config;
    if let Some(max) = cfg.max_grad_norm {
        clip_global_norm(grads, max);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for j in 0..p.len() {
            p[j] *= 1.0 - lr * cfg.weight_decay;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Cosine annealing from `lr0` at epoch 0 to zero at `total`.
pub fn cosine_lr(epoch: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let e = epoch.min(total) as f64;
    lr0 * (1.0 + (std::f64::consts::PI * e / total as f64).cos()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay() -> AdamWConfig {
        AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut w = vec![0.3, -1.2];
        let mut state = OptimizerState::new(no_decay(), [2]);
        let mut grads = vec![vec![0.0, 0.0]];
        adamw_step(&mut [&mut w], &mut grads, &mut state, 1e-3, &["w"]).unwrap();
        assert_eq!(w, vec![0.3, -1.2]);
    }

    #[test]
    fn clipping_halves_a_norm_two_gradient() {
        let mut grads = vec![vec![2.0_f64.sqrt(), 0.0], vec![2.0_f64.sqrt()]];
        let before = clip_global_norm(&mut grads, 1.0);
        assert!((before - 2.0).abs() < 1e-12);
        assert!((grads[0][0] - 2.0_f64.sqrt() * 0.5).abs() < 1e-6);
        assert!((global_norm(&grads) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_converges_in_a_hundred_steps() {
        // f(w) = w², gradient 2w, from w = 1.
        let cfg = AdamWConfig {
            lr: 0.05,
            ..no_decay()
        };
        let mut w = vec![1.0];
        let mut state = OptimizerState::new(cfg, [1]);
        for _ in 0..100 {
            let mut g = vec![vec![2.0 * w[0]]];
            adamw_step(&mut [&mut w], &mut g, &mut state, cfg.lr, &["w"]).unwrap();
        }
        assert!(w[0].abs() < 0.05, "w = {}", w[0]);
        assert_eq!(state.step_count(), 100);
    }

    #[test]
    fn loss_decreases_monotonically_after_warm_in() {
        let cfg = AdamWConfig {
            lr: 0.01,
            ..no_decay()
        };
        let mut w = vec![2.0, -1.5];
        let mut state = OptimizerState::new(cfg, [2]);
        let loss = |w: &[f64]| w[0] * w[0] + 3.0 * w[1] * w[1];
        let mut prev = f64::INFINITY;
        for step in 0..150 {
            let mut g = vec![vec![2.0 * w[0], 6.0 * w[1]]];
            adamw_step(&mut [&mut w], &mut g, &mut state, cfg.lr, &["w"]).unwrap();
            let l = loss(&w);
            if step >= 5 {
                assert!(l <= prev, "step {step}: {l} > {prev}");
            }
            prev = l;
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut w = vec![0.0];
        let mut state = OptimizerState::new(no_decay(), [1]);
        let mut g = vec![vec![f64::NAN]];
        let err = adamw_step(&mut [&mut w], &mut g, &mut state, 1e-3, &["sage.0.w"]).unwrap_err();
        assert!(err.to_string().contains("sage.0.w"));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 200, 1e-3), 1e-3);
        assert!(cosine_lr(200, 200, 1e-3).abs() < 1e-18);
        assert!((cosine_lr(100, 200, 1e-3) - 5e-4).abs() < 1e-15);
    }
}
