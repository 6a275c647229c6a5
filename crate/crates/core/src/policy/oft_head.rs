use rand_chacha::ChaCha8Rng;

use super::{check_slots, live_entries, ActionHead, HeadGrad, HiddenStates, PolicyConfig};
use crate::error::Result;
use crate::nnet::{loss_and_grad, LossTarget, Mlp, ParamSet};
use crate::types::{ActionChunk, UNIFIED_ACTION_DIM};

/// Parallel regression: one shared MLP maps every query slot to its action
/// row. Trained with L1 over the live (unpadded) dims.
#[derive(Debug, Clone)]
pub struct OftHead {
    mlp: Mlp,
}

impl OftHead {
    pub fn new(cfg: &PolicyConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let h = cfg.head_hidden;
        OftHead {
            mlp: Mlp::new(params, "head.mlp", &[cfg.d, h, h, UNIFIED_ACTION_DIM], rng),
        }
    }
}

impl ActionHead for OftHead {
    fn id(&self) -> &str {
        "oft"
    }

    fn loss(
        &self,
        params: &ParamSet,
        hidden: &HiddenStates,
        target: &ActionChunk,
        _key: u64,
        grad: Option<HeadGrad<'_>>,
    ) -> Result<f64> {
        check_slots(hidden, target)?;
        let tapes = (0..hidden.slot_count)
            .map(|i| self.mlp.forward(params, hidden.slot(i)))
            .collect::<Result<Vec<_>>>()?;
        let live = live_entries(target);
        let pred: Vec<f64> = live
            .iter()
            .map(|&e| tapes[e / UNIFIED_ACTION_DIM].output[e % UNIFIED_ACTION_DIM])
            .collect();
        let want: Vec<f64> = live.iter().map(|&e| target.values[e]).collect();
        let (loss, g_live) = loss_and_grad(&pred, LossTarget::L1(&want))?;
        let mut g = vec![0.0; target.values.len()];
        for (&e, v) in live.iter().zip(g_live) {
            g[e] = v;
        }
        if let Some(HeadGrad { weight, params: grads, tokens }) = grad {
            let d = hidden.d;
            let base = hidden.context_count();
            for (i, tape) in tapes.iter().enumerate() {
                let up: Vec<f64> = g[i * UNIFIED_ACTION_DIM..(i + 1) * UNIFIED_ACTION_DIM]
                    .iter()
                    .map(|v| v * weight)
                    .collect();
                let dx = self.mlp.backward(params, tape, &up, grads)?;
                for (a, v) in tokens[(base + i) * d..(base + i + 1) * d].iter_mut().zip(dx) {
                    *a += v;
                }
            }
        }
        Ok(loss)
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }

    fn predict(&self, params: &ParamSet, hidden: &HiddenStates, _seed: u64) -> Result<ActionChunk> {
        hidden.check()?;
        let mut out = ActionChunk::zeros(hidden.slot_count, UNIFIED_ACTION_DIM, true);
        for i in 0..hidden.slot_count {
            let y = self.mlp.forward(params, hidden.slot(i))?.output;
            for (j, v) in y.into_iter().enumerate() {
                out.set(i, j, v.clamp(-1.0, 1.0));
            }
        }
        Ok(out)
    }
}
