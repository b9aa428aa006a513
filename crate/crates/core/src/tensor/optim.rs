use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the factor that was applied (1 when already within bounds).
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(factor);
        }
        factor
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub s: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor], config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            step: 0,
            m: zeros(),
            s: zeros(),
        }
    }

    /// One bias-corrected Adam update. Weight decay is coupled: `wd * θ` is
    /// added to the gradient before the moments are updated.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if lr <= 0.0 {
            return Err(Error::invalid("adam: learning rate must be positive"));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        for (((p, g), m), s) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.s.iter_mut())
        {
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let grad = g.data()[i] + weight_decay * pd[i];
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * grad;
                let si = &mut s.data_mut()[i];
                *si = beta2 * *si + (1.0 - beta2) * grad * grad;
                let m_hat = m.data()[i] / bc1;
                let s_hat = s.data()[i] / bc2;
                pd[i] -= lr * m_hat / (s_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
