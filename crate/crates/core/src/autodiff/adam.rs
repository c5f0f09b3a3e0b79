use serde::{Deserialize, Serialize};

use crate::autodiff::graph::ParamStore;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, lr_decay: f64) -> Self {
        Self {
            learning_rate,
            lr_decay,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_decay: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction and per-epoch exponential learning-rate decay.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    epoch: u32,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Result<Self> {
        if !(config.learning_rate > 0.0) {
            return Err(Error::invalid("adam: learning rate must be positive"));
        }
        if !(config.lr_decay > 0.0 && config.lr_decay <= 1.0) {
            return Err(Error::invalid("adam: lr decay must lie in (0, 1]"));
        }
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        Ok(Self {
            config,
            step: 0,
            epoch: 0,
            first: zeros.clone(),
            second: zeros,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    /// `learning_rate * lr_decay^epoch`.
    pub fn effective_lr(&self) -> f64 {
        self.config.learning_rate * self.config.lr_decay.powi(self.epoch as i32)
    }

    pub fn end_epoch(&mut self) {
        self.epoch += 1;
    }

    /// Applies one update to every trainable parameter, then zeroes all gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(Error::invalid(format!(
                "adam: optimiser tracks {} tensors but store holds {}",
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let lr = self.effective_lr();
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            if !store.is_trainable(id) {
                continue;
            }
            let m = self.first[id.index()].data_mut();
            let v = self.second[id.index()].data_mut();
            let (value, grad) = store.value_and_grad_mut(id);
            if value.shape() != grad.shape() || m.len() != value.len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: value.shape().to_vec(),
                    right: grad.shape().to_vec(),
                });
            }
            for (((p, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
