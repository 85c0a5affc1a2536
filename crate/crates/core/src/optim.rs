//! Nesterov-accelerated Adam and plateau-driven learning-rate decay.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Store;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NadamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Momentum schedule decay; `mu_t = beta1 * (1 - 0.5 * 0.96^(t * decay))`.
    pub momentum_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-7, momentum_decay: 0.004 }
    }
}

/// Per-parameter first and second moments plus the momentum schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Nadam {
    pub cfg: NadamConfig,
    pub step: u64,
    pub mu_product: f64,
    pub m: Store,
    pub v: Store,
}

impl Nadam {
    pub fn new(params: &Store, cfg: NadamConfig) -> Self {
        Self { cfg, step: 0, mu_product: 1.0, m: params.zeros_like(), v: params.zeros_like() }
    }

    fn mu(&self, t: u64) -> f64 {
        self.cfg.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * self.cfg.momentum_decay))
    }

    /// Applies one update with learning rate `lr`.
    pub fn update(&mut self, params: &mut Store, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.step += 1;
        let t = self.step;
        let (mu_t, mu_next) = (self.mu(t), self.mu(t + 1));
        self.mu_product *= mu_t;
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
        let c_m = mu_next / (1.0 - self.mu_product * mu_next);
        let c_g = (1.0 - mu_t) / (1.0 - self.mu_product);
        let bias2 = 1.0 - b2.powi(t.min(i32::MAX as u64) as i32);
        let it = params.values_mut().iter_mut().zip(self.m.values_mut()).zip(self.v.values_mut()).zip(grads);
        for (((p, m), v), g) in it {
            if g.shape() != p.shape() {
                return Err(Error::shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = b1 * md[i] + (1.0 - b1) * gi;
                vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                let m_hat = c_m * md[i] + c_g * gi;
                let v_hat = vd[i] / bias2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Which training signal drives the learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauSignal {
    /// Absolute critic estimate `|mean D(fake) - mean D(real)|`.
    CriticEstimate,
    GeneratorLoss,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    /// Moving-average window applied to the monitored signal.
    pub window: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { factor: 0.15, patience: 5, window: 5, min_lr: 0.0 }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) || self.patience == 0 || self.window == 0 || self.min_lr < 0.0 {
            return Err(Error::config(format!("invalid plateau schedule {self:?}")));
        }
        Ok(())
    }
}

/// Multiplies learning rates by `factor` after `patience` epochs without a
/// new minimum of the smoothed signal. Rates never increase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub cfg: PlateauConfig,
    recent: VecDeque<f64>,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(cfg: PlateauConfig) -> Self {
        Self { cfg, recent: VecDeque::new(), best: f64::INFINITY, stale: 0 }
    }

    /// Feeds one epoch's value; returns true when the rates were reduced.
    pub fn observe(&mut self, value: f64, lrs: &mut [f64]) -> bool {
        self.recent.push_back(value);
        if self.recent.len() > self.cfg.window {
            self.recent.pop_front();
        }
        let avg = self.recent.iter().sum::<f64>() / self.recent.len() as f64;
        if avg < self.best {
            self.best = avg;
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.stale < self.cfg.patience {
            return false;
        }
        self.stale = 0;
        let mut changed = false;
        for lr in lrs.iter_mut() {
            let next = (*lr * self.cfg.factor).max(self.cfg.min_lr).min(*lr);
            changed |= next != *lr;
            *lr = next;
        }
        changed
    }
}
