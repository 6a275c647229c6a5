use std::sync::Mutex;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check_slots, ActionHead, HeadGrad, HeadSession, HiddenStates, PolicyConfig};
use crate::error::{Error, Result};
use crate::nnet::{flow_interpolant, loss_and_grad, LossTarget, Mlp, ParamId, ParamSet};
use crate::rng;
use crate::types::{ActionChunk, UNIFIED_ACTION_DIM};

/// Smallest `1 − τ` used when turning a clean-sample estimate into a
/// velocity.
const MIN_REMAINING: f64 = 0.05;

#[derive(Debug, Clone)]
struct SlowPath {
    w: ParamId,
    b: ParamId,
    period: u64,
}

#[derive(Debug, Default)]
struct SlowCache {
    queries: u64,
    refreshes: u64,
    summary: Option<Vec<f64>>,
}

/// Flow-matching head over the flattened `k × 32` chunk.
///
/// The network estimates the clean chunk `x̂1 = f(x_τ, τ, cond) + g·x_τ`
/// (`g` a learned scalar, zero at init) and the velocity is
/// `(x̂1 − x_τ) / (1 − τ)`. Sampling integrates that velocity with Euler
/// steps from seeded Gaussian noise.
///
/// The `groot` variant adds a slow pathway: a summary `tanh(W·pooled + b)`
/// appended to the condition. At inference the summary is cached and only
/// recomputed every `system2_period` queries.
#[derive(Debug)]
pub struct FlowHead {
    id: &'static str,
    k: usize,
    d: usize,
    steps: usize,
    mlp: Mlp,
    skip: ParamId,
    slow: Option<SlowPath>,
    cache: Mutex<SlowCache>,
}

impl FlowHead {
    fn build(id: &'static str, slow: bool, cfg: &PolicyConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let n = cfg.k * UNIFIED_ACTION_DIM;
        let cond = if slow { 2 * cfg.d } else { cfg.d };
        let slow = slow.then(|| SlowPath {
            w: params.add_xavier("head.system2.w", cfg.d, cfg.d, rng),
            b: params.add_zeros("head.system2.b", vec![cfg.d]),
            period: cfg.groot.system2_period,
        });
        let h = cfg.flow.hidden;
        let mlp = Mlp::new(params, "head.mlp", &[n + 1 + cond, h, h, n], rng);
        let skip = params.add_zeros("head.skip", vec![1]);
        FlowHead {
            id,
            k: cfg.k,
            d: cfg.d,
            steps: cfg.flow.denoise_steps,
            mlp,
            skip,
            slow,
            cache: Mutex::new(SlowCache::default()),
        }
    }

    pub fn pi(cfg: &PolicyConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        Self::build("pi", false, cfg, params, rng)
    }

    pub fn groot(cfg: &PolicyConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        Self::build("groot", true, cfg, params, rng)
    }

    fn summary(&self, params: &ParamSet, s: &SlowPath, pooled: &[f64]) -> Vec<f64> {
        let (w, b) = (params.get(s.w), params.get(s.b));
        w.chunks_exact(self.d)
            .zip(b)
            .map(|(row, b)| (b + row.iter().zip(pooled).map(|(a, x)| a * x).sum::<f64>()).tanh())
            .collect()
    }

    fn net_input(&self, x: &[f64], tau: f64, pooled: &[f64], summary: Option<&[f64]>) -> Vec<f64> {
        let mut inp = Vec::with_capacity(x.len() + 1 + 2 * self.d);
        inp.extend_from_slice(x);
        inp.push(tau);
        inp.extend_from_slice(pooled);
        if let Some(s) = summary {
            inp.extend_from_slice(s);
        }
        inp
    }

    /// Velocity estimate at `(x, τ)`.
    pub(crate) fn velocity(&self, params: &ParamSet, x: &[f64], tau: f64, pooled: &[f64], summary: Option<&[f64]>) -> Result<Vec<f64>> {
        let out = self.mlp.forward(params, &self.net_input(x, tau, pooled, summary))?.output;
        let g = params.get(self.skip)[0];
        let den = (1.0 - tau).max(MIN_REMAINING);
        Ok(out.iter().zip(x).map(|(o, xv)| (o + g * xv - xv) / den).collect())
    }

    /// Flow-matching loss for one explicit `(x0, x1, τ)` draw.
    pub fn loss_on_path(
        &self,
        params: &ParamSet,
        hidden: &HiddenStates,
        x0: &[f64],
        x1: &[f64],
        tau: f64,
        grad: Option<HeadGrad<'_>>,
    ) -> Result<f64> {
        let n = self.k * UNIFIED_ACTION_DIM;
        if x0.len() != n || x1.len() != n {
            return Err(Error::shape(format!(
                "flow path endpoints must hold {n} values"
            )));
        }
        let xt = flow_interpolant(x0, x1, tau)?;
        let pooled = hidden.pooled();
        let summary = self.slow.as_ref().map(|s| self.summary(params, s, &pooled));
        let tape = self
            .mlp
            .forward(params, &self.net_input(&xt, tau, &pooled, summary.as_deref()))?;
        let skip = params.get(self.skip)[0];
        let den = (1.0 - tau).max(MIN_REMAINING);
        let v: Vec<f64> = tape
            .output
            .iter()
            .zip(&xt)
            .map(|(o, xv)| (o + skip * xv - xv) / den)
            .collect();
        let (loss, gv) = loss_and_grad(&v, LossTarget::FlowMatching { x0, x1, tau })?;
        if let Some(HeadGrad { weight, params: grads, tokens }) = grad {
            let dx1: Vec<f64> = gv.iter().map(|v| v * weight / den).collect();
            grads.get_mut(self.skip)[0] += dx1.iter().zip(&xt).map(|(a, b)| a * b).sum::<f64>();
            let dinp = self.mlp.backward(params, &tape, &dx1, grads)?;
            let dcond = &dinp[n + 1..];
            let mut d_pooled = dcond[..self.d].to_vec();
            if let (Some(s), Some(sv)) = (&self.slow, &summary) {
                let wv = params.get(s.w);
                let (dw, db) = grads.pair_mut(s.w, s.b);
                for (o, (gs, sv)) in dcond[self.d..].iter().zip(sv).enumerate() {
                    let gz = gs * (1.0 - sv * sv);
                    db[o] += gz;
                    for i in 0..self.d {
                        dw[o * self.d + i] += gz * pooled[i];
                        d_pooled[i] += gz * wv[o * self.d + i];
                    }
                }
            }
            hidden.pooled_backward(&d_pooled, tokens);
        }
        Ok(loss)
    }

    fn noise(&self, parts: &[u64]) -> (ChaCha8Rng, usize) {
        (rng::keyed(parts), self.k * UNIFIED_ACTION_DIM)
    }

    /// Starting point of the sampler for `seed`.
    pub fn initial_noise(&self, seed: u64) -> Vec<f64> {
        let (mut g, n) = self.noise(&[seed, 0x5A3]);
        (0..n).map(|_| g.sample(StandardNormal)).collect()
    }
}

impl ActionHead for FlowHead {
    fn id(&self) -> &str {
        self.id
    }

    fn loss(
        &self,
        params: &ParamSet,
        hidden: &HiddenStates,
        target: &ActionChunk,
        key: u64,
        grad: Option<HeadGrad<'_>>,
    ) -> Result<f64> {
        check_slots(hidden, target)?;
        let (mut g, n) = self.noise(&[key, 0xF10]);
        let tau: f64 = g.gen();
        let x0: Vec<f64> = (0..n).map(|_| g.sample(StandardNormal)).collect();
        self.loss_on_path(params, hidden, &x0, &target.values, tau, grad)
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }

    fn predict(&self, params: &ParamSet, hidden: &HiddenStates, seed: u64) -> Result<ActionChunk> {
        hidden.check()?;
        let pooled = hidden.pooled();
        let summary = match &self.slow {
            None => None,
            Some(s) => {
                let mut c = self.cache.lock().expect("cache lock");
                if c.queries % s.period == 0 || c.summary.is_none() {
                    c.summary = Some(self.summary(params, s, &pooled));
                    c.refreshes += 1;
                }
                c.queries += 1;
                c.summary.clone()
            }
        };
        let mut x = self.initial_noise(seed);
        let dt = 1.0 / self.steps as f64;
        for s in 0..self.steps {
            let tau = s as f64 * dt;
            let v = self.velocity(params, &x, tau, &pooled, summary.as_deref())?;
            for (a, b) in x.iter_mut().zip(v) {
                *a += dt * b;
            }
        }
        let mut out = ActionChunk::zeros(self.k, UNIFIED_ACTION_DIM, true);
        for (o, v) in out.values.iter_mut().zip(x) {
            *o = v.clamp(-1.0, 1.0);
        }
        Ok(out)
    }

    fn slow_refreshes(&self) -> Option<u64> {
        self.slow
            .as_ref()
            .map(|_| self.cache.lock().expect("cache lock").refreshes)
    }

    fn reset_cache(&self) {
        *self.cache.lock().expect("cache lock") = SlowCache::default();
    }

    fn swap_session(&self, incoming: HeadSession) -> HeadSession {
        self.slow.as_ref()?;
        let next = incoming
            .and_then(|b| b.downcast::<SlowCache>().ok())
            .map(|b| *b)
            .unwrap_or_default();
        let prev = std::mem::replace(&mut *self.cache.lock().expect("cache lock"), next);
        Some(Box::new(prev))
    }
}
