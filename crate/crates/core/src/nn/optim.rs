use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::nn::{Float, Parameters, ParametersExt};

/// A model that can score a minibatch and produce gradients.
pub trait Trainable<F: Float>: Parameters<F> + Clone {
    type Example;

    /// Mean loss over `batch`. When `grad` is given, gradients of that mean
    /// are added into it. Dropout is active only when `rng` is given.
    fn batch_loss(
        &self,
        batch: &[&Self::Example],
        grad: Option<&mut Self>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of total steps spent in linear warmup; the rest decays linearly.
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            batch_size: 32,
            lr: 1e-3,
            warmup_frac: 0.05,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: Some(1.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate at `step` (0-based) out of `total` steps.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let total = total.max(1) as f64;
        let warmup = (self.warmup_frac * total).ceil();
        let s = step as f64 + 1.0;
        if s <= warmup {
            self.lr * s / warmup
        } else {
            self.lr * ((total - s + 1.0) / (total - warmup + 1.0)).max(0.0)
        }
    }
}

/// Adam with decoupled weight decay. Biases and normalization parameters
/// are not decayed.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<F>,
    v: Vec<F>,
    step: u64,
}

fn decays(name: &str) -> bool {
    !(name.ends_with("bias") || name.contains("norm"))
}

impl<F: Float> AdamState<F> {
    pub fn new(cfg: &TrainConfig) -> Self {
        AdamState {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<M: Parameters<F> + Clone>(&mut self, model: &mut M, grad: &M, lr: f64) {
        let g = grad.flatten();
        if self.m.len() != g.len() {
            self.m = vec![F::zero(); g.len()];
            self.v = vec![F::zero(); g.len()];
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::c(self.beta1), F::c(self.beta2));
        let bc1 = F::c(1.0 - self.beta1.powi(t));
        let bc2 = F::c(1.0 - self.beta2.powi(t));
        let lr_f = F::c(lr);
        let eps = F::c(self.eps);
        let wd = F::c(lr * self.weight_decay);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        model.visit_mut("", &mut |name, data| {
            let decay = decays(name) && wd != F::zero();
            for p in data.iter_mut() {
                let gi = g[i];
                m[i] = b1 * m[i] + (F::one() - b1) * gi;
                v[i] = b2 * v[i] + (F::one() - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                if decay {
                    *p -= wd * *p;
                }
                *p -= lr_f * mhat / (vhat.sqrt() + eps);
                i += 1;
            }
        });
    }
}

/// One optimizer update on `batch`. Returns the batch loss before the update.
pub fn train_step<F: Float, M: Trainable<F>>(
    model: &mut M,
    batch: &[&M::Example],
    opt: &mut AdamState<F>,
    lr: f64,
    max_grad_norm: Option<f64>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    let mut grad = model.zeroed();
    let loss = model.batch_loss(batch, Some(&mut grad), rng)?;
    if !loss.is_finite() || !grad.all_finite() {
        return Err(CoinError::NonFiniteLoss {
            step: opt.steps() as usize,
            loss,
        });
    }
    if let Some(max) = max_grad_norm {
        let norm = grad.squared_norm().sqrt();
        if norm > max {
            grad.scale(F::c(max / norm));
        }
    }
    opt.step(model, &grad, lr);
    Ok(loss)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Minibatch training with shuffling, warmup/decay schedule and clipping.
pub fn fit<F: Float, M: Trainable<F>>(
    model: &mut M,
    examples: &[M::Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    if cfg.epochs == 0 || examples.is_empty() {
        return Ok(log);
    }
    if cfg.batch_size == 0 {
        return Err(CoinError::InvalidConfig("batch_size must be positive".into()));
    }
    let _ftz = super::FlushDenormals::enable();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamState::new(cfg);
    let per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&M::Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let lr = cfg.lr_at(step, total);
            let loss = train_step(model, &batch, &mut opt, lr, cfg.max_grad_norm, Some(&mut rng))?;
            log.step_losses.push(loss);
            sum += loss;
            step += 1;
        }
        let mean = sum / per_epoch as f64;
        log.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(log)
}
