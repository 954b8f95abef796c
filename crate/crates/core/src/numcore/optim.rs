use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over every trainable tensor of a store. Moment buffers are kept in
/// `f64` whatever the parameter precision.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<F: Real>(store: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` using the gradients stored
    /// on the tensors. Tensors without a gradient are left untouched.
    pub fn step<F: Real>(&mut self, store: &mut ParamStore<F>, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.tensor.requires_grad() {
                continue;
            }
            let Some(grad) = p.tensor.grad().map(<[F]>::to_vec) else {
                continue;
            };
            if lr == 0.0 {
                continue;
            }
            for (i, (w, g)) in p.tensor.data_mut().iter_mut().zip(grad).enumerate() {
                let g = g.f64();
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let update = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                *w = F::c(w.f64() - update);
            }
        }
    }
}

/// Linear warmup over `warmup` steps (1-based `step`), then constant.
pub fn warmup_lr(base: f64, step: usize, warmup: usize) -> f64 {
    if warmup == 0 || step >= warmup {
        base
    } else {
        base * step as f64 / warmup as f64
    }
}

/// Linear warmup, then cosine decay from `base` to `floor·base` at `total`.
pub fn warmup_cosine_lr(base: f64, step: usize, warmup: usize, total: usize, floor: f64) -> f64 {
    if step < warmup {
        return warmup_lr(base, step, warmup);
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let t = ((step - warmup) as f64 / span).min(1.0);
    base * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}
