use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{cosine, ParamSet, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRate {
    /// Peak rate of every group without its own entry.
    pub base: f64,
    /// Floor of the cosine schedule.
    #[serde(default = "default_min_lr")]
    pub min: f64,
    #[serde(default)]
    pub backbone: Option<f64>,
    #[serde(default)]
    pub head: Option<f64>,
}

fn default_min_lr() -> f64 {
    1e-5
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate {
            base: 3e-3,
            min: default_min_lr(),
            backbone: None,
            head: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossScale {
    /// Weight of the auxiliary vision-language pass during co-training.
    #[serde(default)]
    pub vlm: f64,
}

fn d_steps() -> u64 {
    5000
}
fn d_batch() -> usize {
    32
}
fn d_one() -> u32 {
    1
}
fn d_clip() -> f64 {
    1.0
}
fn d_decay() -> f64 {
    0.01
}
fn d_ckpt() -> u64 {
    10_000
}

/// The `trainer:` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    #[serde(default)]
    pub learning_rate: LearningRate,
    #[serde(default = "d_steps")]
    pub max_steps: u64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Auxiliary batch per step in co-training.
    #[serde(default = "d_batch")]
    pub aux_batch_size: usize,
    #[serde(default = "d_one")]
    pub accumulation_steps: u32,
    #[serde(default = "d_clip")]
    pub grad_clip_norm: f64,
    #[serde(default = "d_decay")]
    pub weight_decay: f64,
    #[serde(default = "d_ckpt")]
    pub checkpoint_every: u64,
    /// Comma-separated parameter-path prefixes, e.g. `backbone` or
    /// `backbone.patch,head.mlp.l0`.
    #[serde(default)]
    pub freeze_modules: String,
    #[serde(default)]
    pub loss_scale: LossScale,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: LearningRate::default(),
            max_steps: d_steps(),
            batch_size: d_batch(),
            aux_batch_size: d_batch(),
            accumulation_steps: 1,
            grad_clip_norm: d_clip(),
            weight_decay: d_decay(),
            checkpoint_every: d_ckpt(),
            freeze_modules: String::new(),
            loss_scale: LossScale::default(),
        }
    }
}

fn under(name: &str, prefix: &str) -> bool {
    name == prefix
        || (name.len() > prefix.len() && name.starts_with(prefix) && name.as_bytes()[prefix.len()] == b'.')
}

impl TrainerConfig {
    /// Optimizer view of the base group.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr_max: self.learning_rate.base,
            lr_min: self.learning_rate.min,
            total_steps: self.max_steps,
            grad_clip_norm: self.grad_clip_norm,
            accumulation_steps: self.accumulation_steps,
            seed,
            weight_decay: self.weight_decay,
        }
    }

    pub fn frozen_prefixes(&self) -> Vec<&str> {
        self.freeze_modules
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config(0).validate()?;
        let lr = &self.learning_rate;
        for g in [lr.backbone, lr.head].into_iter().flatten() {
            if !(g >= 0.0) {
                return Err(Error::Config(format!("trainer.learning_rate group rate {g} is negative")));
            }
        }
        if self.batch_size == 0 || self.aux_batch_size == 0 {
            return Err(Error::Config("trainer batch sizes must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("trainer.checkpoint_every must be positive".into()));
        }
        if !(self.loss_scale.vlm >= 0.0) {
            return Err(Error::Config("trainer.loss_scale.vlm must be non-negative".into()));
        }
        Ok(())
    }

    /// Every freeze path must name at least one parameter.
    pub fn check_freeze(&self, params: &ParamSet) -> Result<()> {
        for p in self.frozen_prefixes() {
            if !params.entries().iter().any(|e| under(&e.name, p)) {
                return Err(Error::Config(format!(
                    "trainer.freeze_modules: `{p}` matches no parameters"
                )));
            }
        }
        Ok(())
    }

    /// Per-entry rate at `step`; `None` for frozen entries.
    pub fn rates(&self, params: &ParamSet, step: u64) -> Vec<Option<f64>> {
        let frozen = self.frozen_prefixes();
        let lr = &self.learning_rate;
        params
            .entries()
            .iter()
            .map(|e| {
                if frozen.iter().any(|p| under(&e.name, p)) {
                    return None;
                }
                let peak = if under(&e.name, "backbone") {
                    lr.backbone.unwrap_or(lr.base)
                } else if under(&e.name, "head") {
                    lr.head.unwrap_or(lr.base)
                } else {
                    lr.base
                };
                Some(cosine(step, self.max_steps, peak, lr.min.min(peak)))
            })
            .collect()
    }
}
