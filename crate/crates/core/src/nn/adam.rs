use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers are laid out like the store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients held in `store`. Any non-finite
    /// gradient aborts the step before a single value changes.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(bad) = store.tensors().iter().find(|t| t.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFinite(format!("gradient of parameter {}", bad.id)));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((t, m), v) in store.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..t.values.len() {
                let g = t.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                t.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let total: f64 = store
        .tensors()
        .iter()
        .flat_map(|t| t.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total.is_finite() {
        let scale = max_norm / total;
        for t in store.tensors_mut() {
            t.grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(p: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", vec![1], vec![p]);
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = scalar(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        for _ in 0..5 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.tensors()[0].values[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = 1, v_hat = 1 after bias correction: p = 0 - 0.1 * 1 / (1 + 1e-8).
        let mut s = scalar(0.0);
        s.tensors_mut()[0].grad[0] = 1.0;
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut adam = Adam::new(cfg, &s);
        adam.step(&mut s).unwrap();
        assert!((s.tensors()[0].values[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut s = scalar(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let mut prev = 1.0;
        for _ in 0..200 {
            s.tensors_mut()[0].grad[0] = -0.3;
            adam.step(&mut s).unwrap();
            let now = s.tensors()[0].values[0];
            assert!(now > prev);
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_param() {
        let mut s = scalar(1.0);
        s.add("q", vec![2], vec![0.0, 0.0]);
        s.tensors_mut()[0].grad[0] = 1.0;
        s.tensors_mut()[1].grad[1] = f64::NAN;
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let err = adam.step(&mut s).unwrap_err();
        assert!(err.to_string().contains('q'));
        assert_eq!(s.tensors()[0].values[0], 1.0);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut s = scalar(0.0);
        s.add("q", vec![1], vec![0.0]);
        s.tensors_mut()[0].grad[0] = 3.0;
        s.tensors_mut()[1].grad[0] = 4.0;
        assert_eq!(clip_grad_norm(&mut s, 1.0), 5.0);
        assert!((s.tensors()[0].grad[0] - 0.6).abs() < 1e-15);
        assert!((s.tensors()[1].grad[0] - 0.8).abs() < 1e-15);
    }
}
