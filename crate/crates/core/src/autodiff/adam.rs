use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use super::TensorError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment buffers for every parameter of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| {
            s.ids()
                .map(|id| Tensor::zeros(s.value(id).shape()))
                .collect()
        };
        AdamState {
            config,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    /// Restores saved moments, e.g. from a checkpoint.
    pub fn from_parts(config: AdamConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        AdamState { config, step, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// One bias-corrected Adam update using the gradients held by `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), TensorError> {
        let c = self.config;
        if !(c.lr > 0.0 && c.eps > 0.0 && c.weight_decay >= 0.0)
            || !(0.0..1.0).contains(&c.beta1)
            || !(0.0..1.0).contains(&c.beta2)
        {
            return Err(TensorError::Contract(format!(
                "invalid Adam hyperparameters {c:?}"
            )));
        }
        if store.len() != self.m.len() {
            return Err(TensorError::Dimension {
                op: "adam_step",
                detail: format!(
                    "{} parameters, {} moment buffers",
                    store.len(),
                    self.m.len()
                ),
            });
        }
        for (i, id) in store.ids().enumerate() {
            if store.value(id).shape() != self.m[i].shape() {
                return Err(TensorError::Dimension {
                    op: "adam_step",
                    detail: format!(
                        "{}: {:?} vs moment {:?}",
                        store.name(id),
                        store.value(id).shape(),
                        self.m[i].shape()
                    ),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, id) in store.ids().enumerate() {
            let grad = store.grad(id).data().to_vec();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let theta = store.value_mut(id).data_mut();
            for j in 0..theta.len() {
                let g = grad[j] + c.weight_decay * theta[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                theta[j] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(values));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store_with(vec![1.0, -2.0, 3.5]);
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        for _ in 0..10 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.value(s.id("w").unwrap()).data(), &[1.0, -2.0, 3.5]);
        assert_eq!(adam.step_count(), 10);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store_with(vec![0.0]);
        let id = s.id("w").unwrap();
        s.grad_mut(id).data_mut()[0] = 1.0;
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, &s);
        adam.step(&mut s).unwrap();
        // m_hat = 1, v_hat = 1 => delta = -0.1 / (1 + 1e-8)
        let delta = s.value(id).data()[0];
        assert!((delta + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((delta + 0.1).abs() < 1e-8);
    }

    /// Scalar re-derivation of the Adam recurrence, independent of the buffers above.
    fn adam_oracle(theta0: f64, grads: &[f64], c: AdamConfig) -> f64 {
        let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
        for (t, g0) in grads.iter().enumerate() {
            let g = g0 + c.weight_decay * theta;
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            let k = (t + 1) as i32;
            theta -= c.lr * (m / (1.0 - c.beta1.powi(k)))
                / ((v / (1.0 - c.beta2.powi(k))).sqrt() + c.eps);
        }
        theta
    }

    #[test]
    fn two_steps_match_oracle() {
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 1e-4,
            ..AdamConfig::default()
        };
        let grads = [[0.3, -1.2], [-0.7, 0.05]];
        let init = [0.5, -0.25];
        let mut s = store_with(init.to_vec());
        let id = s.id("w").unwrap();
        let mut adam = AdamState::new(cfg, &s);
        for g in &grads {
            s.zero_grad();
            s.grad_mut(id).data_mut().copy_from_slice(g);
            adam.step(&mut s).unwrap();
        }
        for j in 0..2 {
            let expect = adam_oracle(init[j], &[grads[0][j], grads[1][j]], cfg);
            assert!((s.value(id).data()[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_store_rejected() {
        let s = store_with(vec![1.0]);
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        let mut other = store_with(vec![1.0, 2.0]);
        assert!(matches!(
            adam.step(&mut other),
            Err(TensorError::Dimension { .. })
        ));
    }
}
