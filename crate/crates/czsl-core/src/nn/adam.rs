//! Adam with coupled L2 weight decay: the decay term joins the raw gradient
//! before the moment updates, then moments are bias-corrected as usual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.005,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state for one parameter list. The list order is fixed at
/// construction; `step` must receive parameters and gradients in that order.
#[derive(Clone, Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        AdamState {
            cfg,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            step: 0,
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over all parameters. Gradients must be finite.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "{} params / {} grads for {} optimizer slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), slot) in params.iter().zip(grads).zip(0..) {
            if p.shape() != self.m[slot].shape() || g.shape() != self.m[slot].shape() {
                return Err(Error::shape(format!("parameter {slot} shape changed")));
            }
            if !g.is_finite() {
                return Err(Error::numeric(format!("gradient {slot} is not finite")));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for i in 0..self.m.len() {
            let p = &mut *params[i];
            let g = &grads[i];
            for j in 0..p.len() {
                let grad = g.data()[j] + c.weight_decay * p.data()[j];
                let m = &mut self.m[i].data_mut()[j];
                *m = c.beta1 * *m + (1.0 - c.beta1) * grad;
                let v = &mut self.v[i].data_mut()[j];
                *v = c.beta2 * *v + (1.0 - c.beta2) * grad * grad;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                p.data_mut()[j] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}
