//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second-moment state for a fixed, ordered parameter list.
pub struct Adam {
    cfg: AdamConfig,
    moments: Vec<Option<(Tensor, Tensor)>>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Self {
            cfg,
            moments: (0..n_params).map(|_| None).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Start a new optimizer step (advances the bias-correction counter).
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Update one parameter in place. `idx` must be stable across steps.
    pub fn update(&mut self, idx: usize, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::Dimension(format!(
                "adam: param {:?} vs grad {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        let slot = self
            .moments
            .get_mut(idx)
            .ok_or_else(|| Error::Contract(format!("adam: parameter index {idx} unknown")))?;
        let (m, v) = slot.get_or_insert_with(|| {
            (Tensor::zeros(param.shape()), Tensor::zeros(param.shape()))
        });
        if m.shape() != param.shape() {
            return Err(Error::Dimension("adam: state shape changed".into()));
        }
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for i in 0..param.numel() {
            let g = grad.data()[i];
            let mi = self.cfg.beta1 * m.data()[i] + (1.0 - self.cfg.beta1) * g;
            let vi = self.cfg.beta2 * v.data()[i] + (1.0 - self.cfg.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            param.data_mut()[i] -=
                self.cfg.learning_rate * mhat / (vhat.sqrt() + self.cfg.epsilon);
        }
        Ok(())
    }

    /// Convenience: one step over an aligned parameter/gradient list.
    pub fn step_all(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "adam: {} params vs {} grads",
                params.len(),
                grads.len()
            )));
        }
        self.begin_step();
        for (i, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
            self.update(i, p, g)?;
        }
        Ok(())
    }
}
