use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar, Tensor};
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
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter of one store.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update using the store's gradients.
    /// Gradients are left in place.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Internal(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            if store.value(id).shape() != self.m[id.index()].shape() {
                return Err(Error::Internal(format!(
                    "optimizer moment for {:?} has shape {:?}, parameter has {:?}",
                    store.name(id),
                    self.m[id.index()].shape(),
                    store.value(id).shape()
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = T::lit(1.0 - c.beta2.powf(self.step as f64));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for id in store.ids() {
            let (value, grad) = store.value_and_grad_mut(id);
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            for (((p, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64], grads: &[f64]) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::from_slice(values).unwrap()).unwrap();
        store.grad_mut(id).data_mut().copy_from_slice(grads);
        store
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = store_with(&[0.5, -1.5, 3.0], &[0.0; 3]);
        let before = store.flat_values();
        let mut adam = AdamState::new(&store, AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.flat_values(), before);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        // m_hat = g, v_hat = g^2, so the update is -lr * g / (|g| + eps).
        for g in [3.7, -0.02, 1e-3] {
            let mut store = store_with(&[1.0], &[g]);
            let mut adam = AdamState::new(&store, AdamConfig::default());
            adam.step(&mut store).unwrap();
            let delta = store.flat_values()[0] - 1.0;
            assert!((delta + 1e-3 * f64::signum(g)).abs() < 1e-6, "g={g} delta={delta}");
        }
    }

    #[test]
    fn mismatched_store_is_an_internal_error() {
        let store = store_with(&[1.0], &[0.0]);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        let mut other = store_with(&[1.0, 2.0], &[0.0, 0.0]);
        assert!(matches!(adam.step(&mut other), Err(Error::Internal(_))));
        let mut extra = store_with(&[1.0], &[0.0]);
        extra.add("q", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(adam.step(&mut extra), Err(Error::Internal(_))));
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut store = store_with(&[0.3, -0.7], &[0.0, 0.0]);
            let mut adam = AdamState::new(&store, AdamConfig::default());
            for k in 0..20 {
                let id = store.ids().next().unwrap();
                let vals = store.value(id).data().to_vec();
                let g: Vec<f64> = vals.iter().map(|v| 2.0 * v + k as f64 * 0.01).collect();
                store.grad_mut(id).data_mut().copy_from_slice(&g);
                adam.step(&mut store).unwrap();
            }
            store.flat_values()
        };
        assert_eq!(run(), run());
    }
}
