use serde::{Deserialize, Serialize};

use super::{NumError, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates for every tensor of a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self { config, first_moment: zeros.clone(), second_moment: zeros, step_count: 0 }
    }

    /// One bias-corrected ADAM update using the gradients stored on `params`.
    /// Tensors without a gradient buffer are treated as having zero gradient.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), NumError> {
        if params.len() != self.first_moment.len() {
            return Err(NumError::Dimension(format!(
                "optimizer tracks {} tensors, parameter set has {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        for (slot, m) in self.first_moment.iter().enumerate() {
            if m.len() != params.tensor(slot).numel() {
                return Err(NumError::Dimension(format!(
                    "moment buffer {slot} has {} values, parameter has {}",
                    m.len(),
                    params.tensor(slot).numel()
                )));
            }
        }
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for slot in 0..params.len() {
            let tensor = params.tensor_mut(slot);
            let grad = tensor.grad().map(<[f64]>::to_vec);
            let Some(grad) = grad else { continue };
            let m = &mut self.first_moment[slot];
            let v = &mut self.second_moment[slot];
            for (((w, g), mi), vi) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
