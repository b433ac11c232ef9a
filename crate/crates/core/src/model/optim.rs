//! AdamW with optional cosine learning-rate decay.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::model::net::GradientSet;
use crate::model::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

impl LrSchedule {
    /// Learning-rate multiplier at `step` out of `total_steps`.
    pub fn scale(&self, step: usize, total_steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let t = step as f64 / total_steps.max(1) as f64;
                0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Adam with decoupled weight decay. Decay applies to matrix-shaped tensors
/// only; biases, norm scales/shifts, and other row vectors are exempt.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: usize,
}

impl AdamW {
    pub fn new(params: &ModelParams, weight_decay: f64) -> Self {
        let m = params.tensors().iter().map(|(_, t)| Array2::zeros(t.raw_dim())).collect();
        let v = params.tensors().iter().map(|(_, t)| Array2::zeros(t.raw_dim())).collect();
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m, v, step: 0 }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientSet, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, (_, tensor)) in params.tensors_mut().enumerate() {
            let g = &grads.tensors()[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let decay = if tensor.nrows() > 1 { self.weight_decay } else { 0.0 };
            for ((t, (m, v)), &g) in
                tensor.iter_mut().zip(m.iter_mut().zip(v.iter_mut())).zip(g.iter())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *t -= lr * (m_hat / (v_hat.sqrt() + self.eps) + decay * *t);
            }
        }
    }
}
