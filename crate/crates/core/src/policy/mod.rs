//! Backbone + action-head composition.
//!
//! A backbone turns an [`Observation`] into [`HiddenStates`] (patch tokens,
//! instruction tokens, then one query slot per chunk row) and optionally an
//! auxiliary prediction. A head turns hidden states into a normalized
//! 32-wide action chunk. Both are looked up by id in a [`Registry`], so any
//! backbone can be paired with any head.

mod backbone;
mod fast_head;
mod flow_head;
mod oft_head;

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::ParamSet;
use crate::rng;
use crate::types::{ensure_valid, ActionChunk, AuxPrediction, LossReport, Observation, UNIFIED_ACTION_DIM};

pub use backbone::{instruction_buckets, pooled_cells, ToyBackbone, Flavor, GRID, WORD_BUCKETS};
pub use fast_head::FastHead;
pub use flow_head::FlowHead;
pub use oft_head::OftHead;

/// Default width of the head MLPs.
pub const DEFAULT_HEAD_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FastHeadConfig {
    #[serde(default = "default_fast_gamma")]
    pub gamma: f64,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
}

fn default_fast_gamma() -> f64 {
    0.05
}

fn default_vocab() -> usize {
    256
}

impl Default for FastHeadConfig {
    fn default() -> Self {
        FastHeadConfig {
            gamma: default_fast_gamma(),
            vocab_size: default_vocab(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowHeadConfig {
    #[serde(default = "default_denoise")]
    pub denoise_steps: usize,
    #[serde(default = "default_flow_hidden")]
    pub hidden: usize,
}

fn default_denoise() -> usize {
    10
}

fn default_flow_hidden() -> usize {
    128
}

impl Default for FlowHeadConfig {
    fn default() -> Self {
        FlowHeadConfig {
            denoise_steps: default_denoise(),
            hidden: default_flow_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrootConfig {
    #[serde(default = "one")]
    pub system2_period: u64,
}

fn one() -> u64 {
    1
}

impl Default for GrootConfig {
    fn default() -> Self {
        GrootConfig { system2_period: 1 }
    }
}

/// The `model:` section of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub backbone_id: String,
    pub head_id: String,
    /// Chunk horizon; one query slot per row.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Hidden-state width.
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default)]
    pub aux_scale: f64,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
    #[serde(default)]
    pub fast: FastHeadConfig,
    #[serde(default)]
    pub flow: FlowHeadConfig,
    #[serde(default)]
    pub groot: GrootConfig,
}

fn default_k() -> usize {
    8
}

fn default_d() -> usize {
    64
}

fn default_head_hidden() -> usize {
    DEFAULT_HEAD_HIDDEN
}

impl PolicyConfig {
    pub fn new(backbone_id: &str, head_id: &str) -> Self {
        PolicyConfig {
            backbone_id: backbone_id.to_string(),
            head_id: head_id.to_string(),
            k: default_k(),
            d: default_d(),
            aux_scale: 0.0,
            head_hidden: default_head_hidden(),
            fast: FastHeadConfig::default(),
            flow: FlowHeadConfig::default(),
            groot: GrootConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.k == 0 || self.d == 0 || self.head_hidden == 0 {
            return bad("k, d and head_hidden must be positive".into());
        }
        if !(self.aux_scale >= 0.0) {
            return bad(format!("aux_scale must be non-negative, got {}", self.aux_scale));
        }
        if self.flow.denoise_steps == 0 {
            return bad("flow.denoise_steps must be at least 1".into());
        }
        if self.flow.hidden == 0 {
            return bad("flow.hidden must be positive".into());
        }
        if self.groot.system2_period == 0 {
            return bad("groot.system2_period must be at least 1".into());
        }
        if !(self.fast.gamma > 0.0) || self.fast.vocab_size == 0 {
            return bad("fast.gamma and fast.vocab_size must be positive".into());
        }
        Ok(())
    }
}

/// Token matrix produced by a backbone, row-major `len() × d`, laid out as
/// patch tokens, then instruction tokens, then `slot_count` query slots.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub d: usize,
    pub tokens: Vec<f64>,
    pub patch_count: usize,
    pub instruction_count: usize,
    pub slot_count: usize,
}

impl HiddenStates {
    pub fn len(&self) -> usize {
        self.patch_count + self.instruction_count + self.slot_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.tokens[i * self.d..(i + 1) * self.d]
    }

    /// Patch plus instruction tokens.
    pub fn context_count(&self) -> usize {
        self.patch_count + self.instruction_count
    }

    pub fn slot(&self, i: usize) -> &[f64] {
        self.token(self.context_count() + i)
    }

    /// Sum of the context tokens scaled by [`pool_weight`].
    pub fn pooled(&self) -> Vec<f64> {
        let n = self.context_count();
        let mut p = vec![0.0; self.d];
        for row in self.tokens[..n * self.d].chunks_exact(self.d) {
            for (a, v) in p.iter_mut().zip(row) {
                *a += v;
            }
        }
        p.iter_mut().for_each(|v| *v *= pool_weight(n));
        p
    }

    /// Adds the gradient of [`Self::pooled`] into the context rows of
    /// `d_tokens`.
    pub fn pooled_backward(&self, d_pooled: &[f64], d_tokens: &mut [f64]) {
        let n = self.context_count();
        for row in d_tokens[..n * self.d].chunks_exact_mut(self.d) {
            for (a, g) in row.iter_mut().zip(d_pooled) {
                *a += g * pool_weight(n);
            }
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.tokens.len() != self.len() * self.d || self.context_count() == 0 {
            return Err(Error::shape(format!(
                "hidden states hold {} values for {} tokens of width {}",
                self.tokens.len(),
                self.len(),
                self.d
            )));
        }
        Ok(())
    }
}

/// Pooling weight for `n` context tokens. A plain mean drowns the few lit
/// patches among the background ones; `1/sqrt(n)` keeps them audible.
pub fn pool_weight(n: usize) -> f64 {
    1.0 / (n.max(1) as f64).sqrt()
}

/// Backbone output plus whatever the backbone needs for its backward pass.
pub struct Encoding {
    pub hidden: HiddenStates,
    pub aux: AuxPrediction,
    pub cache: Box<dyn Any + Send>,
}

impl fmt::Debug for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Encoding")
            .field("hidden", &self.hidden)
            .field("aux", &self.aux)
            .finish_non_exhaustive()
    }
}

/// Gradient accumulation target handed to a head.
pub struct HeadGrad<'a> {
    /// Multiplier applied to every gradient written.
    pub weight: f64,
    pub params: &'a mut ParamSet,
    /// Gradient with respect to `HiddenStates::tokens`.
    pub tokens: &'a mut [f64],
}

pub trait Backbone: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;

    fn encode(&self, params: &ParamSet, obs: &Observation) -> Result<Encoding>;

    /// Auxiliary loss and its gradient with respect to the aux payload, or
    /// `None` when this backbone has no target for the example.
    fn aux_loss(
        &self,
        enc: &Encoding,
        obs: &Observation,
        future: Option<&Observation>,
    ) -> Result<Option<(f64, Vec<f64>)>>;

    /// Accumulates parameter gradients given gradients for the tokens and
    /// the aux payload (both already weighted).
    fn backward(
        &self,
        params: &ParamSet,
        enc: &Encoding,
        d_tokens: &[f64],
        d_aux: Option<&[f64]>,
        grads: &mut ParamSet,
    ) -> Result<()>;
}

pub trait ActionHead: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;

    /// Action loss for a normalized `k × 32` target. With `grad`, the
    /// weighted gradients are accumulated as well.
    fn loss(
        &self,
        params: &ParamSet,
        hidden: &HiddenStates,
        target: &ActionChunk,
        key: u64,
        grad: Option<HeadGrad<'_>>,
    ) -> Result<f64>;

    fn predict(&self, params: &ParamSet, hidden: &HiddenStates, seed: u64) -> Result<ActionChunk>;

    fn as_any(&self) -> &dyn Any;

    /// Hook for heads that learn something from the training targets
    /// before optimization starts.
    fn fit(&mut self, _targets: &[ActionChunk]) -> Result<()> {
        Ok(())
    }

    /// Extra file persisted with a checkpoint: (file name, JSON text).
    fn state_file(&self) -> Option<(&'static str, String)> {
        None
    }

    fn load_state(&mut self, _json: &str) -> Result<()> {
        Ok(())
    }

    /// Instrumentation for heads with a cached slow pathway.
    fn slow_refreshes(&self) -> Option<u64> {
        None
    }

    fn reset_cache(&self) {}

    /// Exchanges the head's per-client inference state for `incoming` and
    /// returns the previous one. A server keeps one per connection so
    /// clients never see each other's cached state. `None` means fresh.
    fn swap_session(&self, incoming: HeadSession) -> HeadSession {
        drop(incoming);
        None
    }
}

/// Opaque per-client state of a stateful head.
pub type HeadSession = Option<Box<dyn Any + Send>>;

type BackboneFactory =
    fn(&PolicyConfig, &mut ParamSet, &mut rand_chacha::ChaCha8Rng) -> Result<Box<dyn Backbone>>;
type HeadFactory =
    fn(&PolicyConfig, &mut ParamSet, &mut rand_chacha::ChaCha8Rng) -> Result<Box<dyn ActionHead>>;

/// Name → constructor tables for backbones and heads.
#[derive(Clone)]
pub struct Registry {
    backbones: BTreeMap<String, BackboneFactory>,
    heads: BTreeMap<String, HeadFactory>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("backbones", &self.backbone_ids())
            .field("heads", &self.head_ids())
            .finish()
    }
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Registry::empty();
        r.register_backbone("vlm", |c, p, g| Ok(Box::new(ToyBackbone::new(Flavor::Vlm, c, p, g))));
        r.register_backbone("wm", |c, p, g| Ok(Box::new(ToyBackbone::new(Flavor::Wm, c, p, g))));
        r.register_head("fast", |c, p, g| Ok(Box::new(FastHead::new(c, p, g)?)));
        r.register_head("oft", |c, p, g| Ok(Box::new(OftHead::new(c, p, g))));
        r.register_head("pi", |c, p, g| Ok(Box::new(FlowHead::pi(c, p, g))));
        r.register_head("groot", |c, p, g| Ok(Box::new(FlowHead::groot(c, p, g))));
        r
    }
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            backbones: BTreeMap::new(),
            heads: BTreeMap::new(),
        }
    }

    pub fn register_backbone(&mut self, id: &str, f: BackboneFactory) {
        self.backbones.insert(id.to_string(), f);
    }

    pub fn register_head(&mut self, id: &str, f: HeadFactory) {
        self.heads.insert(id.to_string(), f);
    }

    pub fn backbone_ids(&self) -> Vec<String> {
        self.backbones.keys().cloned().collect()
    }

    pub fn head_ids(&self) -> Vec<String> {
        self.heads.keys().cloned().collect()
    }

    /// Builds the backbone first, then attaches the head. Parameters are
    /// initialized from `seed`.
    pub fn compose(&self, cfg: &PolicyConfig, seed: u64) -> Result<Policy> {
        cfg.validate()?;
        let bf = self.backbones.get(&cfg.backbone_id).ok_or_else(|| Error::Registry {
            kind: "backbone",
            id: cfg.backbone_id.clone(),
            available: self.backbone_ids().join(", "),
        })?;
        let hf = self.heads.get(&cfg.head_id).ok_or_else(|| Error::Registry {
            kind: "head",
            id: cfg.head_id.clone(),
            available: self.head_ids().join(", "),
        })?;
        let mut params = ParamSet::new();
        let mut g = rng::keyed(&[rng::derive(seed, "init")]);
        let backbone = bf(cfg, &mut params, &mut g)?;
        let head = hf(cfg, &mut params, &mut g)?;
        Ok(Policy {
            config: cfg.clone(),
            params,
            backbone,
            head,
        })
    }
}

/// Composes with the built-in registry.
pub fn registry_compose(cfg: &PolicyConfig, seed: u64) -> Result<Policy> {
    Registry::default().compose(cfg, seed)
}

/// One supervised example: observation, normalized 32-wide target chunk and
/// optionally the next observation (the world-model target).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub obs: Observation,
    pub actions: ActionChunk,
    pub future: Option<Observation>,
}

/// Inference result; actions stay normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub normalized_actions: ActionChunk,
}

#[derive(Debug)]
pub struct Policy {
    config: PolicyConfig,
    params: ParamSet,
    backbone: Box<dyn Backbone>,
    head: Box<dyn ActionHead>,
}

impl Policy {
    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn head(&self) -> &dyn ActionHead {
        self.head.as_ref()
    }

    pub fn head_mut(&mut self) -> &mut dyn ActionHead {
        self.head.as_mut()
    }

    pub fn backbone(&self) -> &dyn Backbone {
        self.backbone.as_ref()
    }

    pub fn encode(&self, obs: &Observation) -> Result<Encoding> {
        ensure_valid(obs, None)?;
        self.backbone.encode(&self.params, obs)
    }

    pub fn head_loss(&self, hidden: &HiddenStates, target: &ActionChunk, key: u64) -> Result<f64> {
        self.head.loss(&self.params, hidden, target, key, None)
    }

    pub fn head_predict(&self, hidden: &HiddenStates, seed: u64) -> Result<ActionChunk> {
        self.head.predict(&self.params, hidden, seed)
    }

    fn check_target(&self, target: &ActionChunk) -> Result<()> {
        if target.horizon != self.config.k || target.dims != UNIFIED_ACTION_DIM || !target.normalized {
            return Err(Error::shape(format!(
                "target must be a normalized {}x{} chunk, got {}x{} (normalized: {})",
                self.config.k, UNIFIED_ACTION_DIM, target.horizon, target.dims, target.normalized
            )));
        }
        Ok(())
    }

    /// Mean loss report over `batch`; with `grads`, also accumulates
    /// `weight/len · ∇total_loss`. Sample `i` draws its noise from
    /// `(key, i)`.
    pub fn loss_and_grads(
        &self,
        batch: &[TrainSample],
        key: u64,
        weight: f64,
        mut grads: Option<&mut ParamSet>,
    ) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let scale = self.config.aux_scale;
        let mut encs = Vec::with_capacity(batch.len());
        for s in batch {
            ensure_valid(&s.obs, Some(&s.actions))?;
            self.check_target(&s.actions)?;
            encs.push(self.backbone.encode(&self.params, &s.obs)?);
        }
        let mut auxes = Vec::with_capacity(batch.len());
        if scale > 0.0 {
            for (s, e) in batch.iter().zip(&encs) {
                auxes.push(self.backbone.aux_loss(e, &s.obs, s.future.as_ref())?);
            }
        }
        let use_aux = !auxes.is_empty() && auxes.iter().all(Option::is_some);
        let w = weight / batch.len() as f64;
        let mut reports = Vec::with_capacity(batch.len());
        for (i, (s, enc)) in batch.iter().zip(&encs).enumerate() {
            let sample_key = rng::mix(&[key, i as u64]);
            let aux = if use_aux { auxes[i].as_ref() } else { None };
            let action = match grads.as_deref_mut() {
                None => self.head.loss(&self.params, &enc.hidden, &s.actions, sample_key, None)?,
                Some(g) => {
                    let mut d_tokens = vec![0.0; enc.hidden.tokens.len()];
                    let l = self.head.loss(
                        &self.params,
                        &enc.hidden,
                        &s.actions,
                        sample_key,
                        Some(HeadGrad {
                            weight: w,
                            params: g,
                            tokens: &mut d_tokens,
                        }),
                    )?;
                    let d_aux: Option<Vec<f64>> =
                        aux.map(|(_, da)| da.iter().map(|v| v * w * scale).collect());
                    self.backbone
                        .backward(&self.params, enc, &d_tokens, d_aux.as_deref(), g)?;
                    l
                }
            };
            reports.push(LossReport::new(action, aux.map(|a| a.0), scale));
        }
        LossReport::mean(&reports)
    }

    /// Mean auxiliary loss of the backbone alone over `batch` (the future
    /// observation, when given, is the world-model target). With `grads`,
    /// accumulates `weight/len · ∇aux`.
    pub fn aux_loss_and_grads(
        &self,
        batch: &[(Observation, Option<Observation>)],
        weight: f64,
        mut grads: Option<&mut ParamSet>,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let w = weight / batch.len() as f64;
        let mut total = 0.0;
        for (obs, future) in batch {
            ensure_valid(obs, None)?;
            let enc = self.backbone.encode(&self.params, obs)?;
            let (l, da) = self.backbone.aux_loss(&enc, obs, future.as_ref())?.ok_or_else(|| {
                Error::Config(format!(
                    "backbone `{}` has no auxiliary target for this example",
                    self.backbone.id()
                ))
            })?;
            total += l;
            if let Some(g) = grads.as_deref_mut() {
                let d_aux: Vec<f64> = da.iter().map(|v| v * w).collect();
                let zeros = vec![0.0; enc.hidden.tokens.len()];
                self.backbone.backward(&self.params, &enc, &zeros, Some(&d_aux), g)?;
            }
        }
        Ok(total / batch.len() as f64)
    }

    /// Gives the head a look at the training targets (FAST fits its
    /// tokenizer here).
    pub fn fit_head(&mut self, targets: &[ActionChunk]) -> Result<()> {
        self.head.fit(targets)
    }

    pub fn predict(&self, obs: &Observation, seed: u64) -> Result<Prediction> {
        let enc = self.encode(obs)?;
        let chunk = self
            .head
            .predict(&self.params, &enc.hidden, seed)
            .map_err(|e| match e {
                Error::Codec(m) => Error::Prediction(m),
                e @ Error::CoefficientRange { .. } => Error::Prediction(e.to_string()),
                other => other,
            })?;
        Ok(Prediction {
            normalized_actions: chunk,
        })
    }
}

/// Training entry point: mean loss report over a batch (no gradients).
pub fn policy_forward(policy: &Policy, batch: &[TrainSample], key: u64) -> Result<LossReport> {
    policy.loss_and_grads(batch, key, 1.0, None)
}

/// Inference entry point.
pub fn policy_predict_action(policy: &Policy, obs: &Observation, seed: u64) -> Result<Prediction> {
    policy.predict(obs, seed)
}

/// Backbone entry point: hidden states and the auxiliary prediction.
pub fn backbone_encode(policy: &Policy, obs: &Observation) -> Result<(HiddenStates, AuxPrediction)> {
    let enc = policy.encode(obs)?;
    Ok((enc.hidden, enc.aux))
}

/// Largest relative error between the analytic gradient of the mean total
/// loss and central differences with step `eps`. Up to `per_entry`
/// coordinates of every tensor are probed, chosen from `key`.
pub fn gradient_check(
    policy: &mut Policy,
    batch: &[TrainSample],
    key: u64,
    per_entry: usize,
    eps: f64,
) -> Result<f64> {
    use rand::seq::index::sample;

    let mut grads = policy.params.zeros_like();
    policy.loss_and_grads(batch, key, 1.0, Some(&mut grads))?;
    let mut worst: f64 = 0.0;
    for e in 0..policy.params.len() {
        let len = policy.params.entries()[e].values.len();
        let mut g = rng::keyed(&[key, e as u64, 0xFD]);
        let picks = sample(&mut g, len, per_entry.min(len));
        for i in picks.iter() {
            let orig = policy.params.entries()[e].values[i];
            policy.params.entries_mut()[e].values[i] = orig + eps;
            let plus = policy.loss_and_grads(batch, key, 1.0, None)?.total_loss();
            policy.params.entries_mut()[e].values[i] = orig - eps;
            let minus = policy.loss_and_grads(batch, key, 1.0, None)?.total_loss();
            policy.params.entries_mut()[e].values[i] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let an = grads.entries()[e].values[i];
            worst = worst.max((fd - an).abs() / (fd.abs() + an.abs()).max(1e-6));
        }
    }
    Ok(worst)
}

/// Flat indices of the unmasked entries of a padded chunk.
pub(crate) fn live_entries(target: &ActionChunk) -> Vec<usize> {
    (0..target.horizon)
        .flat_map(|r| {
            (0..target.dims)
                .filter(|&c| target.dof_mask[c])
                .map(move |c| r * target.dims + c)
        })
        .collect()
}

pub(crate) fn check_slots(hidden: &HiddenStates, target: &ActionChunk) -> Result<()> {
    hidden.check()?;
    if target.horizon != hidden.slot_count || target.dims != UNIFIED_ACTION_DIM {
        return Err(Error::shape(format!(
            "target {}x{} does not align with {} slots of width {}",
            target.horizon, target.dims, hidden.slot_count, UNIFIED_ACTION_DIM
        )));
    }
    Ok(())
}
