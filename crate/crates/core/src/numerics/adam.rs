use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for every entry of a store, in store order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = store
            .entries()
            .iter()
            .map(|e| vec![T::zero(); e.value.len()])
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, index: usize) -> &[T] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[T] {
        &self.v[index]
    }

    /// One bias-corrected Adam update from the accumulated gradients.
    /// Gradients are left in place; the caller zeroes them.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if store.len() != self.m.len()
            || store
                .entries()
                .iter()
                .zip(&self.m)
                .any(|(e, m)| e.value.len() != m.len())
        {
            return Err(Error::invalid(
                "optimizer state does not match the parameter store",
            ));
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let b1 = T::cst(c.beta1);
        let b2 = T::cst(c.beta2);
        let one = T::one();
        let corr1 = T::cst(1.0 - c.beta1.powi(t));
        let corr2 = T::cst(1.0 - c.beta2.powi(t));
        let eps = T::cst(c.epsilon);
        let lr = T::cst(lr);

        for (i, id) in (0..store.len()).map(|i| (i, crate::numerics::ParamId(i))) {
            let grad = store.grad(id).data().to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let value = store.value_mut(id).data_mut();
            for (((p, &g), mi), vi) in value.iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / corr1;
                let v_hat = *vi / corr2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
