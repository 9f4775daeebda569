use std::f64::consts::PI;

use super::{ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// Adam with decoupled weight decay. Decay applies only to parameters
/// flagged with `decay`.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    config: AdamWConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update using the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr_t, eps, wd) = (T::of(lr), T::of(c.eps), T::of(c.weight_decay));
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let decay = p.decay;
            let (w, g) = (p.value.data_mut(), p.grad.data());
            for i in 0..w.len() {
                let mi = b1 * m.data()[i] + (T::one() - b1) * g[i];
                let vi = b2 * v.data()[i] + (T::one() - b2) * g[i] * g[i];
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mut update = (mi / bc1) / ((vi / bc2).sqrt() + eps);
                if decay {
                    update = update + wd * w[i];
                }
                w[i] = w[i] - lr_t * update;
            }
        }
    }
}

/// Linear warmup from 0 to `lr_max` over `warmup` steps, then cosine decay
/// to `lr_min` at `total`; constant `lr_min` afterwards.
pub fn cosine_warmup_lr(step: u64, warmup: u64, total: u64, lr_max: f64, lr_min: f64) -> f64 {
    if step < warmup {
        return lr_max * step as f64 / warmup as f64;
    }
    if step >= total || total <= warmup {
        return lr_min;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * progress).cos())
}
