use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate at every epoch boundary.
    pub epoch_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            epoch_decay: 0.95,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction and per-epoch exponential learning-rate decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    config: AdamConfig,
    lr: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
    epoch: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            lr: config.learning_rate,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
            step: 0,
            epoch: 0,
        }
    }

    pub fn for_model<P: Parameters>(config: AdamConfig, model: &P) -> Self {
        Self::new(config, model.num_params())
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn end_epoch(&mut self) {
        self.epoch += 1;
        self.lr *= self.config.epoch_decay;
    }

    /// One update. An all-zero gradient leaves both the parameters and the
    /// optimizer state untouched; a non-finite gradient is an error.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.to_flat();
        if g.len() != self.first.len() {
            return Err(Error::Shape {
                context: "adam gradients",
                expected: self.first.len(),
                got: g.len(),
            });
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i}")));
        }
        if g.iter().all(|&v| v == 0.0) {
            return Ok(());
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, epsilon, ..
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let mut p = params.to_flat();
        for i in 0..p.len() {
            self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g[i];
            self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = self.first[i] / bc1;
            let v_hat = self.second[i] / bc2;
            p[i] -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        params.load_flat(&p)
    }
}
