//! Adam optimizer with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::nn::NamedParams;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// beta1 = 0.5 is the usual stabilizing choice for adversarial training.
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

struct Slot {
    name: String,
    param: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Adam {
    cfg: AdamConfig,
    slots: Vec<Slot>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &NamedParams) -> Adam {
        let slots = params
            .iter()
            .map(|(name, p)| Slot {
                name: name.clone(),
                param: p.clone(),
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
            })
            .collect();
        Adam { cfg, slots, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all registered parameters, reading gradients off the
    /// tensors and clearing them afterwards. Missing gradients count as zero.
    pub fn step(&mut self) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for slot in &mut self.slots {
            let grad = match slot.param.grad() {
                Some(g) => g,
                None => continue, // unreachable parameter: zero gradient, no movement
            };
            if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter '{}' at index {bad} is {}",
                    slot.name, grad[bad]
                )));
            }
            let mut data = slot.param.data();
            for i in 0..data.len() {
                slot.m[i] = self.cfg.beta1 * slot.m[i] + (1.0 - self.cfg.beta1) * grad[i];
                slot.v[i] =
                    self.cfg.beta2 * slot.v[i] + (1.0 - self.cfg.beta2) * grad[i] * grad[i];
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                data[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
            slot.param.set_data(&data)?;
            slot.param.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let p = Tensor::param(vec![1.0, -2.0], &[2]).unwrap();
        let params = vec![("p".to_string(), p.clone())];
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &params);
        opt.step().unwrap(); // no grad at all
        assert_eq!(p.data(), vec![1.0, -2.0]);
        let loss = p.scale(0.0).sum_all();
        loss.backward().unwrap();
        opt.step().unwrap();
        assert_eq!(p.data(), vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // With g = 1, mhat = 1 and vhat = 1, so the first update is
        // lr * 1 / (1 + eps) ~= lr.
        let p = Tensor::param(vec![0.0], &[1]).unwrap();
        let params = vec![("p".to_string(), p.clone())];
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &params);
        let loss = p.sum_all();
        loss.backward().unwrap();
        opt.step().unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-8, "got {}", p.data()[0]);
    }

    #[test]
    fn nonfinite_gradient_aborts_naming_parameter() {
        // Loss is a finite 1.0 but both branches push a 1e308 gradient into
        // p, overflowing the accumulator to +inf.
        let p = Tensor::param(vec![1e-308], &[1]).unwrap();
        let a = p.scale(1e308);
        let b = p.scale(1e308);
        let loss = a.mul(&b).unwrap().sum_all();
        loss.backward().unwrap();
        let params = vec![("g.block2.kernels".to_string(), p.clone())];
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &params);
        let err = opt.step().unwrap_err();
        assert!(err.to_string().contains("g.block2.kernels"), "{err}");
    }

    #[test]
    fn deterministic_over_100_steps() {
        let run = || {
            let p = Tensor::param(vec![0.3, -0.7, 2.0], &[3]).unwrap();
            let params = vec![("p".to_string(), p.clone())];
            let mut opt = Adam::new(AdamConfig::with_lr(0.01), &params);
            for _ in 0..100 {
                let loss = p.mul(&p).unwrap().sum_all();
                loss.backward().unwrap();
                opt.step().unwrap();
            }
            p.data()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b); // bit-identical
    }
}
