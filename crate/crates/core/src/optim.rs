//! AdamW with global-norm clipping and a linear warmup/decay schedule.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, ParamStore};
use crate::error::{DstError, Result};
use crate::scalar::{c, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
    pub warmup_fraction: f64,
    pub total_steps: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
            max_grad_norm: 1.0,
            warmup_fraction: 0.1,
            total_steps: 55_000,
        }
    }
}

impl AdamWConfig {
    /// Learning rate for the update that follows `step` completed updates.
    pub fn lr_at(&self, step: u64) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let warmup = (self.warmup_fraction * total).round();
        let s = step as f64 + 1.0;
        let factor = if s <= warmup {
            s / warmup
        } else {
            ((total - s) / (total - warmup).max(1.0)).max(0.0)
        };
        self.learning_rate * factor
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F: Scalar> {
    pub m: Vec<Array2<F>>,
    pub v: Vec<Array2<F>>,
    pub step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ParamStore<F>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm<F: Scalar>(grads: &Gradients<F>) -> f64 {
    grads
        .params
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|x| {
            let x = x.to_f64_lossy();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Applies one update in place and returns the pre-clip gradient norm.
pub fn step<F: Scalar>(
    params: &mut ParamStore<F>,
    state: &mut AdamState<F>,
    grads: &Gradients<F>,
    cfg: &AdamWConfig,
) -> Result<f64> {
    if grads.params.len() > params.len() || state.m.len() != params.len() {
        return Err(DstError::Shape("optimizer state does not match parameters".into()));
    }
    let norm = grad_norm(grads);
    if !norm.is_finite() {
        return Err(DstError::Validation(format!("non-finite gradient norm {norm}")));
    }
    let clip = if cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm {
        cfg.max_grad_norm / norm
    } else {
        1.0
    };
    let lr = cfg.lr_at(state.step);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (c::<F>(cfg.beta1), c::<F>(cfg.beta2));
    let (one_b1, one_b2) = (c::<F>(1.0 - cfg.beta1), c::<F>(1.0 - cfg.beta2));
    let clip = c::<F>(clip);
    let step_size = c::<F>(lr / bc1);
    let inv_bc2 = c::<F>(1.0 / bc2);
    let eps = c::<F>(cfg.eps);
    for (i, value) in params.values.iter_mut().enumerate() {
        let decay = if params.no_decay[i] { 0.0 } else { cfg.weight_decay };
        if decay > 0.0 {
            let k = c::<F>(1.0 - lr * decay);
            value.mapv_inplace(|x| x * k);
        }
        let Some(Some(g)) = grads.params.get(i) else { continue };
        Zip::from(value)
            .and(&mut state.m[i])
            .and(&mut state.v[i])
            .and(g)
            .for_each(|p, m, v, &g| {
                let g = g * clip;
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            });
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays_to_zero() {
        let cfg = AdamWConfig {
            learning_rate: 1.0,
            total_steps: 100,
            ..Default::default()
        };
        assert!((cfg.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((cfg.lr_at(9) - 1.0).abs() < 1e-12);
        assert!(cfg.lr_at(50) < 1.0);
        assert_eq!(cfg.lr_at(99), 0.0);
        assert_eq!(cfg.lr_at(500), 0.0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::default();
        store.add("w", Array2::from_elem((1, 2), 1.0), true);
        let mut st = AdamState::new(&store);
        let grads = Gradients {
            params: vec![Some(Array2::from_shape_vec((1, 2), vec![0.5, -0.5]).unwrap())],
        };
        let cfg = AdamWConfig {
            learning_rate: 0.1,
            warmup_fraction: 0.0,
            total_steps: 1_000_000,
            max_grad_norm: 0.0,
            ..Default::default()
        };
        step(&mut store, &mut st, &grads, &cfg).unwrap();
        let w = &store.values[0];
        assert!((w[[0, 0]] - 0.9).abs() < 1e-5);
        assert!((w[[0, 1]] - 1.1).abs() < 1e-5);
    }
}
