use rand_chacha::ChaCha8Rng;

use super::{check_slots, ActionHead, HeadGrad, HiddenStates, PolicyConfig};
use crate::codec::{FastCodec, FastCodecConfig};
use crate::error::{Error, Result};
use crate::nnet::{loss_and_grad, LossTarget, Mlp, ParamId, ParamSet};
use crate::types::{ActionChunk, UNIFIED_ACTION_DIM};

/// Autoregressive token head over the FAST encoding of the chunk.
///
/// Each step predicts the next token from `[pooled; E[previous token] + P[s]]`
/// where `s` is the number of symbols already emitted (`E` has one extra
/// row for the start marker). Indexing by symbol offset rather than token
/// index keeps `P` aligned with the coefficient layout under BPE. Decoding is greedy and
/// only admits tokens whose expansion still fits in the remaining symbol
/// budget, so every decoded sequence expands to exactly `k × 32` symbols.
#[derive(Debug, Clone)]
pub struct FastHead {
    d: usize,
    vocab: usize,
    codec: FastCodec,
    tok_emb: ParamId,
    pos_emb: ParamId,
    mlp: Mlp,
}

impl FastHead {
    pub fn new(cfg: &PolicyConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        let codec_cfg =
            FastCodecConfig::for_normalized(cfg.k, UNIFIED_ACTION_DIM, cfg.fast.gamma, cfg.fast.vocab_size);
        if codec_cfg.vocab_size != cfg.fast.vocab_size {
            return Err(Error::Config(format!(
                "model.fast.vocab_size {} is below the base alphabet of {} symbols",
                cfg.fast.vocab_size, codec_cfg.alphabet_size
            )));
        }
        Self::with_codec(codec_cfg, cfg.d, cfg.head_hidden, params, rng)
    }

    /// Head over an explicit codec configuration.
    pub fn with_codec(
        codec_cfg: FastCodecConfig,
        d: usize,
        hidden: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let vocab = codec_cfg.vocab_size;
        let max_len = codec_cfg.symbol_count();
        let codec = FastCodec::new(codec_cfg)?;
        Ok(FastHead {
            d,
            vocab,
            codec,
            tok_emb: params.add_xavier("head.tok_emb", vocab + 1, d, rng),
            pos_emb: params.add_xavier("head.pos_emb", max_len, d, rng),
            mlp: Mlp::new(params, "head.mlp", &[2 * d, hidden, hidden, vocab], rng),
        })
    }

    pub fn codec(&self) -> &FastCodec {
        &self.codec
    }

    fn step_input(&self, params: &ParamSet, pooled: &[f64], prev: usize, pos: usize) -> Vec<f64> {
        let d = self.d;
        let e = &params.get(self.tok_emb)[prev * d..(prev + 1) * d];
        let p = &params.get(self.pos_emb)[pos * d..(pos + 1) * d];
        let mut x = pooled.to_vec();
        x.extend(e.iter().zip(p).map(|(a, b)| a + b));
        x
    }
}

impl ActionHead for FastHead {
    fn id(&self) -> &str {
        "fast"
    }

    fn loss(
        &self,
        params: &ParamSet,
        hidden: &HiddenStates,
        target: &ActionChunk,
        _key: u64,
        mut grad: Option<HeadGrad<'_>>,
    ) -> Result<f64> {
        check_slots(hidden, target)?;
        let tokens = self.codec.encode(target)?.tokens;
        let pooled = hidden.pooled();
        let n = tokens.len() as f64;
        let d = self.d;
        let mut loss = 0.0;
        let mut d_pooled = vec![0.0; d];
        let lens = self.codec.token_lengths();
        let mut prev = self.vocab;
        let mut pos = 0;
        for &tok in &tokens {
            let tape = self.mlp.forward(params, &self.step_input(params, &pooled, prev, pos))?;
            let (l, g) = loss_and_grad(&tape.output, LossTarget::CrossEntropy(tok as usize))?;
            loss += l / n;
            if let Some(hg) = grad.as_mut() {
                let up: Vec<f64> = g.iter().map(|v| v * hg.weight / n).collect();
                let dx = self.mlp.backward(params, &tape, &up, hg.params)?;
                let (de, dp) = hg.params.pair_mut(self.tok_emb, self.pos_emb);
                for i in 0..d {
                    d_pooled[i] += dx[i];
                    de[prev * d + i] += dx[d + i];
                    dp[pos * d + i] += dx[d + i];
                }
            }
            prev = tok as usize;
            pos += lens[prev];
        }
        if let Some(hg) = grad {
            hidden.pooled_backward(&d_pooled, hg.tokens);
        }
        Ok(loss)
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }

    fn predict(&self, params: &ParamSet, hidden: &HiddenStates, _seed: u64) -> Result<ActionChunk> {
        hidden.check()?;
        let pooled = hidden.pooled();
        let lens = self.codec.token_lengths();
        let total = self.codec.config().symbol_count();
        let mut remaining = total;
        let mut tokens = Vec::new();
        let mut prev = self.vocab;
        while remaining > 0 {
            let logits = self
                .mlp
                .forward(params, &self.step_input(params, &pooled, prev, total - remaining))?
                .output;
            let best = logits
                .iter()
                .enumerate()
                .filter(|(t, _)| *t < lens.len() && lens[*t] <= remaining)
                .fold(None::<(usize, f64)>, |acc, (t, &v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((t, v)),
                })
                .ok_or_else(|| Error::Codec("no admissible token".into()))?
                .0;
            remaining -= lens[best];
            tokens.push(best as u32);
            prev = best;
        }
        let mut chunk = self.codec.decode(&tokens)?;
        chunk.values.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        Ok(chunk)
    }

    fn fit(&mut self, targets: &[ActionChunk]) -> Result<()> {
        let cfg = FastCodecConfig {
            merges: Vec::new(),
            ..self.codec.config().clone()
        };
        self.codec = FastCodec::fit(cfg, targets)?;
        Ok(())
    }

    fn state_file(&self) -> Option<(&'static str, String)> {
        Some((
            "fast_tokenizer.json",
            serde_json::to_string_pretty(self.codec.config()).expect("codec config serializes"),
        ))
    }

    fn load_state(&mut self, json: &str) -> Result<()> {
        let cfg: FastCodecConfig =
            serde_json::from_str(json).map_err(|e| Error::format("fast_tokenizer.json", e))?;
        let cur = self.codec.config();
        if (cfg.horizon, cfg.dims, cfg.alphabet_size, cfg.vocab_size)
            != (cur.horizon, cur.dims, cur.alphabet_size, cur.vocab_size)
        {
            return Err(Error::Integrity(
                "fast_tokenizer.json does not match the head configuration".into(),
            ));
        }
        self.codec = FastCodec::new(cfg)?;
        Ok(())
    }
}
