use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

/// Learning-rate schedule, clipping and accumulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
    pub grad_clip_norm: f64,
    #[serde(default = "one")]
    pub accumulation_steps: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
}

fn one() -> u32 {
    1
}

fn default_decay() -> f64 {
    0.01
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 1e-3,
            lr_min: 1e-5,
            total_steps: 1000,
            grad_clip_norm: 1.0,
            accumulation_steps: 1,
            seed: 0,
            weight_decay: default_decay(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("trainer: {m}")));
        if !(self.lr_max >= 0.0 && self.lr_min >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.lr_min > self.lr_max {
            return bad("lr_min exceeds lr_max");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        if self.accumulation_steps == 0 {
            return bad("accumulation_steps must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Cosine decay from `lr_max` at step 0 to `lr_min` at `total_steps`,
/// held at `lr_min` afterwards.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    cosine(step, cfg.total_steps, cfg.lr_max, cfg.lr_min)
}

pub fn cosine(step: u64, total: u64, hi: f64, lo: f64) -> f64 {
    if step >= total {
        return lo;
    }
    let frac = step as f64 / total as f64;
    lo + (hi - lo) * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    m: ParamSet,
    v: ParamSet,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(params: &ParamSet, weight_decay: f64) -> AdamW {
        AdamW {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Clips, then updates every entry whose learning rate is `Some`.
    /// Entries with `None` are frozen: no moments, no decay, no update.
    /// Returns the global gradient norm before clipping.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &mut ParamSet,
        lrs: &[Option<f64>],
        clip_norm: f64,
    ) -> Result<f64> {
        if lrs.len() != params.len() || grads.len() != params.len() {
            return Err(Error::shape("optimizer: parameter, gradient and rate counts differ"));
        }
        let mut sq = 0.0;
        for (e, lr) in grads.entries().iter().zip(lrs) {
            if lr.is_none() {
                continue;
            }
            for g in &e.values {
                if !g.is_finite() {
                    return Err(Error::Numerics(format!("non-finite gradient in {}", e.name)));
                }
                sq += g * g;
            }
        }
        let norm = sq.sqrt();
        if norm > clip_norm {
            grads.scale(clip_norm / norm);
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let entries = params
            .entries_mut()
            .iter_mut()
            .zip(grads.entries())
            .zip(self.m.entries_mut().iter_mut().zip(self.v.entries_mut().iter_mut()));
        for (((p, g), (m, v)), lr) in entries.zip(lrs) {
            let Some(lr) = *lr else { continue };
            for (((x, g), m), v) in p
                .values
                .iter_mut()
                .zip(&g.values)
                .zip(m.values.iter_mut())
                .zip(v.values.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *x -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *x);
            }
        }
        Ok(norm)
    }

    /// Step count followed by both moment buffers, little-endian.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = self.t.to_le_bytes().to_vec();
        out.extend(self.m.to_le_bytes());
        out.extend(self.v.to_le_bytes());
        out
    }

    pub fn load_le_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let n = self.m.scalar_count() * 8;
        if bytes.len() != 8 + 2 * n {
            return Err(Error::Integrity(format!(
                "optimizer state holds {} bytes, expected {}",
                bytes.len(),
                8 + 2 * n
            )));
        }
        self.t = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        let manifest = self.m.manifest();
        self.m.load_le_bytes(&manifest, &bytes[8..8 + n])?;
        self.v.load_le_bytes(&manifest, &bytes[8 + n..])?;
        Ok(())
    }
}

/// One update of every parameter at the scheduled rate for `step`.
pub fn optimizer_step(
    params: &mut ParamSet,
    grads: &mut ParamSet,
    opt: &mut AdamW,
    step: u64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let lrs = vec![Some(lr_at(step, cfg)); params.len()];
    opt.step(params, grads, &lrs, cfg.grad_clip_norm)
}
