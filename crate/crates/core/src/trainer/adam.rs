use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Adam optimizer state for one flat parameter vector. `step` descends.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        self.step_with_lr(params, grad, self.config.lr)
    }

    pub fn step_with_lr(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "optimizer holds {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        ensure_finite("optimizer gradient", grad)?;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One Adam update of `params` against `grad`, returning the new parameters.
pub fn adam_update(state: &mut Adam, params: &[f64], grad: &[f64], lr: f64) -> Result<Vec<f64>> {
    let mut out = params.to_vec();
    state.step_with_lr(&mut out, grad, lr)?;
    Ok(out)
}
