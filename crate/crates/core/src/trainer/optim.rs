//! AdamW: bias-corrected adaptive moments with decoupled weight decay.
//!
//! ```text
//! p <- p * (1 - lr * wd)
//! m <- b1 m + (1 - b1) g          v <- b2 v + (1 - b2) g^2
//! p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```

use crate::model::{Gradients, ModelConfig, Parameters, Tensors};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    m: Tensors,
    v: Tensors,
    step: u64,
}

impl AdamW {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            m: Tensors::zeros(config),
            v: Tensors::zeros(config),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients, hp: &AdamWParams) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - hp.beta1.powi(t);
        let bc2 = 1.0 - hp.beta2.powi(t);
        let decay = 1.0 - hp.learning_rate * hp.weight_decay;
        for (((p, g), m), v) in params
            .tensors
            .slices_mut()
            .into_iter()
            .zip(grads.tensors.slices())
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
        {
            for i in 0..p.len() {
                p[i] *= decay;
                m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
                v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.eps);
            }
        }
    }
}
