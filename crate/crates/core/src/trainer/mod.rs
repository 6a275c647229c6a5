//! Behavior-cloning and co-training loops, checkpoint packages and the
//! per-step event log.

mod checkpoint;
mod config;
mod events;
#[cfg(test)]
mod tests;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointPackage, TrainerState, CONFIG_FILE,
    EMBODIMENT_STATS_FILE, OPTIMIZER_FILE, STATS_FILE, TRAINER_STATE, WEIGHTS_FILE,
    WEIGHTS_MANIFEST,
};
pub use config::{LearningRate, LossScale, TrainerConfig};
pub use events::{read_events, EventSink, JsonlSink, NullSink, StepEvent};

use crate::codec::{normalize, pad_to_unified};
use crate::config::RootConfig;
use crate::data::Mixture;
use crate::error::{Error, Result};
use crate::eval::StatsTable;
use crate::nnet::AdamW;
use crate::policy::{Policy, TrainSample};
use crate::rng;
use crate::types::{ActionChunk, LossReport, Observation};

/// Where periodic and final checkpoints go.
#[derive(Debug, Clone)]
pub struct CheckpointTarget {
    pub dir: PathBuf,
    pub config: RootConfig,
}

impl CheckpointTarget {
    pub fn step_dir(&self, step: u64) -> PathBuf {
        self.dir.join(format!("step_{step:06}"))
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub last_report: Option<LossReport>,
    pub last_aux: Option<f64>,
    pub checkpoints: Vec<CheckpointPackage>,
    pub optimizer: AdamW,
}

/// Per-robot-type statistics of the mixture (first dataset wins).
pub fn mixture_statistics(mixture: &Mixture) -> StatsTable {
    let mut t = StatsTable::new();
    for d in mixture.datasets() {
        t.entry(d.tag.name.clone()).or_insert_with(|| d.stats.clone());
    }
    t
}

/// Every `(episode, start)` target chunk of the mixture, normalized and
/// padded. Used to fit head-side tokenizers.
pub fn all_target_chunks(mixture: &Mixture, k: usize) -> Result<Vec<ActionChunk>> {
    let mut out = Vec::new();
    for d in mixture.datasets() {
        for (ei, ep) in d.episodes.iter().enumerate() {
            for s in 0..ep.len() {
                let c = d.chunk_at(ei, s, k)?;
                out.push(pad_to_unified(&normalize(&c, &d.stats)?, &d.tag)?);
            }
        }
    }
    Ok(out)
}

/// Draws of micro-batch `micro` at `step`. Draw indices run across
/// micro-batches so `n × b` accumulation sees the same samples as one
/// batch of `n·b`.
pub fn micro_batch(mixture: &Mixture, step: u64, micro: u32, b: usize, k: usize) -> Result<Vec<TrainSample>> {
    let base = micro as u64 * b as u64;
    (0..b as u64)
        .map(|i| {
            let s = mixture.draw(step, base + i, k)?;
            Ok(TrainSample {
                obs: s.obs,
                actions: s.actions,
                future: Some(s.future),
            })
        })
        .collect()
}

pub fn aux_batch(aux: &[Observation], seed: u64, step: u64, n: usize) -> Vec<(Observation, Option<Observation>)> {
    let mut r = rng::keyed(&[seed, step, 0xA0C]);
    (0..n)
        .map(|_| (aux[r.gen_range(0..aux.len())].clone(), None))
        .collect()
}

/// Mean auxiliary loss over a fixed set (no gradients).
pub fn heldout_aux_loss(policy: &Policy, heldout: &[Observation]) -> Result<f64> {
    let batch: Vec<(Observation, Option<Observation>)> =
        heldout.iter().map(|o| (o.clone(), None)).collect();
    policy.aux_loss_and_grads(&batch, 1.0, None)
}

/// Supervised behavior cloning on the action loss.
pub fn train_sft(
    policy: &mut Policy,
    mixture: &Mixture,
    cfg: &TrainerConfig,
    seed: u64,
    ckpt: Option<&CheckpointTarget>,
    sink: &mut dyn EventSink,
) -> Result<TrainOutcome> {
    run(policy, mixture, None, cfg, seed, ckpt, sink)
}

/// Two passes per step: the action batch, then an auxiliary batch whose
/// gradient is scaled by `loss_scale.vlm`; both feed one optimizer step.
pub fn train_cotrain(
    policy: &mut Policy,
    mixture: &Mixture,
    aux: &[Observation],
    cfg: &TrainerConfig,
    seed: u64,
    ckpt: Option<&CheckpointTarget>,
    sink: &mut dyn EventSink,
) -> Result<TrainOutcome> {
    if aux.is_empty() {
        return Err(Error::EmptyDataset);
    }
    run(policy, mixture, Some(aux), cfg, seed, ckpt, sink)
}

fn save(
    policy: &Policy,
    mixture: &Mixture,
    target: &CheckpointTarget,
    step: u64,
    opt: &AdamW,
) -> Result<CheckpointPackage> {
    let table = mixture_statistics(mixture);
    let primary = &mixture.datasets()[0].stats;
    save_checkpoint(
        policy,
        &target.config,
        primary,
        &table,
        step,
        Some(opt),
        &target.step_dir(step),
    )
}

fn run(
    policy: &mut Policy,
    mixture: &Mixture,
    aux: Option<&[Observation]>,
    cfg: &TrainerConfig,
    seed: u64,
    ckpt: Option<&CheckpointTarget>,
    sink: &mut dyn EventSink,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.check_freeze(policy.params())?;
    let k = policy.config().k;
    if policy.head().state_file().is_some() {
        policy.fit_head(&all_target_chunks(mixture, k)?)?;
    }
    let train_seed = rng::derive(seed, "train");
    let aux_seed = rng::derive(seed, "aux");
    let acc = cfg.accumulation_steps;
    let mut opt = AdamW::new(policy.params(), cfg.weight_decay);
    let mut grads = policy.params().zeros_like();
    let mut outcome_ckpts = Vec::new();
    let mut last_report = None;
    let mut last_aux = None;

    for step in 0..cfg.max_steps {
        let t0 = Instant::now();
        grads.fill_zero();
        let mut reports = Vec::with_capacity(acc as usize);
        for j in 0..acc {
            let batch = micro_batch(mixture, step, j, cfg.batch_size, k)?;
            let key = rng::mix(&[train_seed, step, j as u64]);
            reports.push(policy.loss_and_grads(&batch, key, 1.0 / acc as f64, Some(&mut grads))?);
        }
        let report = LossReport::mean(&reports)?;
        let aux_loss = match aux {
            Some(set) => {
                let batch = aux_batch(set, aux_seed, step, cfg.aux_batch_size);
                Some(policy.aux_loss_and_grads(&batch, cfg.loss_scale.vlm, Some(&mut grads))?)
            }
            None => None,
        };
        let lrs = cfg.rates(policy.params(), step);
        let norm = opt.step(policy.params_mut(), &mut grads, &lrs, cfg.grad_clip_norm)?;
        let total = report.total_loss() + aux_loss.map_or(0.0, |a| cfg.loss_scale.vlm * a);
        if !total.is_finite() {
            return Err(Error::Numerics(format!("loss is {total} at step {}", step + 1)));
        }
        let done = step + 1;
        sink.record(&StepEvent {
            step: done,
            lr: crate::nnet::cosine(step, cfg.max_steps, cfg.learning_rate.base, cfg.learning_rate.min.min(cfg.learning_rate.base)),
            action_loss: report.action_loss(),
            aux_loss: aux_loss.or(report.aux_loss()),
            total_loss: total,
            grad_norm: norm,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            global_batch: cfg.batch_size * acc as usize,
        })?;
        last_report = Some(report);
        last_aux = aux_loss;
        if let Some(t) = ckpt {
            if done % cfg.checkpoint_every == 0 || done == cfg.max_steps {
                outcome_ckpts.push(save(policy, mixture, t, done, &opt)?);
            }
        }
    }
    Ok(TrainOutcome {
        steps: cfg.max_steps,
        last_report,
        last_aux,
        checkpoints: outcome_ckpts,
        optimizer: opt,
    })
}

/// Path of the newest package under a checkpoint directory.
pub fn latest_checkpoint(dir: &Path) -> Result<PathBuf> {
    let mut best: Option<PathBuf> = None;
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.flatten() {
        let name = e.file_name().to_string_lossy().to_string();
        if name.starts_with("step_") && best.as_ref().map_or(true, |b| e.path() > *b) {
            best = Some(e.path());
        }
    }
    best.ok_or_else(|| Error::format(dir.display().to_string(), "no step_* checkpoints"))
}
