//! Discrete action tokenizer: per-dimension DCT over the horizon, scalar
//! quantization, frequency-major interleaving, zig-zag mapping to an
//! unsigned alphabet, then BPE.

use serde::{Deserialize, Serialize};

use super::bpe::{self, Merge};
use super::dct;
use crate::error::{Error, Result};
use crate::types::ActionChunk;

pub const DEFAULT_GAMMA: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastCodecConfig {
    pub horizon: usize,
    pub dims: usize,
    /// Quantization step applied to DCT coefficients.
    pub gamma: f64,
    /// Number of base symbols (zig-zag codes `0..alphabet_size`).
    pub alphabet_size: u32,
    /// Token budget; must cover the alphabet plus every merge.
    pub vocab_size: usize,
    #[serde(default)]
    pub merges: Vec<Merge>,
}

impl FastCodecConfig {
    /// Alphabet sized for normalized input: the largest coefficient of a
    /// signal bounded by 1 is the DC term, at most √horizon.
    pub fn for_normalized(horizon: usize, dims: usize, gamma: f64, vocab_size: usize) -> Self {
        let qmax = ((horizon as f64).sqrt() / gamma).round() as u32 + 1;
        let alphabet_size = 2 * qmax + 1;
        FastCodecConfig {
            horizon,
            dims,
            gamma,
            alphabet_size,
            vocab_size: vocab_size.max(alphabet_size as usize),
            merges: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Codec(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.horizon == 0 || self.dims == 0 || self.alphabet_size == 0 {
            return Err(Error::Codec("horizon, dims and alphabet must be positive".into()));
        }
        if (self.alphabet_size as usize) + self.merges.len() > self.vocab_size {
            return Err(Error::Codec(format!(
                "alphabet {} + {} merges exceeds vocab {}",
                self.alphabet_size,
                self.merges.len(),
                self.vocab_size
            )));
        }
        bpe::expansions(self.alphabet_size, &self.merges).map(|_| ())
    }

    pub fn symbol_count(&self) -> usize {
        self.horizon * self.dims
    }

    /// Worst-case per-value reconstruction error: every coefficient off by
    /// γ/2 with the sign that aligns with the basis.
    pub fn error_bound(&self) -> f64 {
        let b = dct::basis(self.horizon);
        (0..self.horizon)
            .map(|t| (0..self.horizon).map(|f| b[f][t].abs()).sum::<f64>())
            .fold(0.0, f64::max)
            * self.gamma
            / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub vocab_size: usize,
}

#[inline]
pub fn zigzag(q: i64) -> u64 {
    if q >= 0 {
        (q as u64) << 1
    } else {
        ((-q as u64) << 1) - 1
    }
}

#[inline]
pub fn unzigzag(z: u64) -> i64 {
    if z & 1 == 0 {
        (z >> 1) as i64
    } else {
        -(((z + 1) >> 1) as i64)
    }
}

/// Codec with its DCT basis and token expansion table precomputed.
#[derive(Debug, Clone)]
pub struct FastCodec {
    cfg: FastCodecConfig,
    basis: Vec<Vec<f64>>,
    table: Vec<Vec<u32>>,
}

impl FastCodec {
    pub fn new(cfg: FastCodecConfig) -> Result<Self> {
        cfg.validate()?;
        let table = bpe::expansions(cfg.alphabet_size, &cfg.merges)?;
        Ok(FastCodec {
            basis: dct::basis(cfg.horizon),
            table,
            cfg,
        })
    }

    pub fn config(&self) -> &FastCodecConfig {
        &self.cfg
    }

    /// Expansion length of every token id.
    pub fn token_lengths(&self) -> Vec<usize> {
        self.table.iter().map(Vec::len).collect()
    }

    /// Quantized coefficients interleaved by ascending frequency.
    pub fn coefficients(&self, chunk: &ActionChunk) -> Result<Vec<i64>> {
        let (k, d) = (self.cfg.horizon, self.cfg.dims);
        if chunk.horizon != k || chunk.dims != d {
            return Err(Error::shape(format!(
                "chunk {}x{} does not match codec {k}x{d}",
                chunk.horizon, chunk.dims
            )));
        }
        let mut q = vec![0i64; k * d];
        let mut col = vec![0.0; k];
        for dim in 0..d {
            for (t, c) in col.iter_mut().enumerate() {
                *c = chunk.get(t, dim);
            }
            for (f, c) in dct::forward(&col, &self.basis).into_iter().enumerate() {
                q[f * d + dim] = (c / self.cfg.gamma).round() as i64;
            }
        }
        Ok(q)
    }

    /// Base-alphabet symbols before BPE.
    pub fn symbols(&self, chunk: &ActionChunk) -> Result<Vec<u32>> {
        self.coefficients(chunk)?
            .into_iter()
            .enumerate()
            .map(|(index, value)| {
                let z = zigzag(value);
                if z >= self.cfg.alphabet_size as u64 {
                    Err(Error::CoefficientRange { index, value })
                } else {
                    Ok(z as u32)
                }
            })
            .collect()
    }

    pub fn encode(&self, chunk: &ActionChunk) -> Result<TokenSequence> {
        let symbols = self.symbols(chunk)?;
        Ok(TokenSequence {
            tokens: bpe::bpe_encode(&symbols, self.cfg.alphabet_size, &self.cfg.merges),
            vocab_size: self.cfg.vocab_size,
        })
    }

    pub fn decode(&self, tokens: &[u32]) -> Result<ActionChunk> {
        let symbols = bpe::bpe_decode(tokens, &self.table)?;
        self.decode_symbols(&symbols)
    }

    pub fn decode_symbols(&self, symbols: &[u32]) -> Result<ActionChunk> {
        let (k, d) = (self.cfg.horizon, self.cfg.dims);
        if symbols.len() != k * d {
            return Err(Error::Codec(format!(
                "expanded to {} symbols, expected {}",
                symbols.len(),
                k * d
            )));
        }
        if let Some((i, s)) = symbols
            .iter()
            .enumerate()
            .find(|(_, s)| **s >= self.cfg.alphabet_size)
        {
            return Err(Error::Codec(format!("symbol {s} at {i} outside alphabet")));
        }
        let mut chunk = ActionChunk::zeros(k, d, true);
        let mut coeffs = vec![0.0; k];
        for dim in 0..d {
            for (f, c) in coeffs.iter_mut().enumerate() {
                *c = unzigzag(symbols[f * d + dim] as u64) as f64 * self.cfg.gamma;
            }
            for (t, v) in dct::inverse(&coeffs, &self.basis).into_iter().enumerate() {
                chunk.set(t, dim, v);
            }
        }
        Ok(chunk)
    }

    /// Learns BPE merges from the symbol streams of `chunks` and returns
    /// a codec that uses them.
    pub fn fit<'a, I>(cfg: FastCodecConfig, chunks: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ActionChunk>,
    {
        let base = FastCodec::new(FastCodecConfig {
            merges: Vec::new(),
            ..cfg.clone()
        })?;
        let corpus = chunks
            .into_iter()
            .map(|c| base.symbols(c))
            .collect::<Result<Vec<_>>>()?;
        let merges = bpe::bpe_train(&corpus, cfg.alphabet_size, cfg.vocab_size)?;
        FastCodec::new(FastCodecConfig { merges, ..cfg })
    }
}

pub fn fast_encode(chunk: &ActionChunk, cfg: &FastCodecConfig) -> Result<TokenSequence> {
    FastCodec::new(cfg.clone())?.encode(chunk)
}

pub fn fast_decode(tokens: &TokenSequence, cfg: &FastCodecConfig) -> Result<ActionChunk> {
    if let Some(t) = tokens.tokens.iter().find(|t| **t as usize >= cfg.vocab_size) {
        return Err(Error::Codec(format!("token {t} outside vocabulary {}", cfg.vocab_size)));
    }
    FastCodec::new(cfg.clone())?.decode(&tokens.tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chunk_from_fn(k: usize, d: usize, f: impl Fn(usize, usize) -> f64) -> ActionChunk {
        let rows: Vec<Vec<f64>> = (0..k).map(|t| (0..d).map(|j| f(t, j)).collect()).collect();
        let mut c = ActionChunk::from_rows(&rows).unwrap();
        c.normalized = true;
        c
    }

    #[test]
    fn zigzag_round_trip() {
        for q in -300..300 {
            assert_eq!(unzigzag(zigzag(q)), q);
        }
        assert_eq!(zigzag(0), 0);
        assert_eq!(zigzag(-1), 1);
        assert_eq!(zigzag(1), 2);
    }

    #[test]
    fn constant_chunk_only_dc() {
        let cfg = FastCodecConfig::for_normalized(8, 7, DEFAULT_GAMMA, 600);
        let codec = FastCodec::new(cfg).unwrap();
        let c = chunk_from_fn(8, 7, |_, j| 0.1 * j as f64 - 0.3);
        let q = codec.coefficients(&c).unwrap();
        for (i, v) in q.iter().enumerate() {
            if i >= 7 {
                assert_eq!(*v, 0, "coefficient {i}");
            }
        }
        assert_ne!(q[0], 0);
    }

    #[test]
    fn coefficient_out_of_alphabet() {
        let mut cfg = FastCodecConfig::for_normalized(8, 2, 0.1, 64);
        cfg.alphabet_size = 5;
        let codec = FastCodec::new(cfg).unwrap();
        let c = chunk_from_fn(8, 2, |_, j| if j == 1 { 0.9 } else { 0.0 });
        match codec.symbols(&c) {
            Err(Error::CoefficientRange { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_token_rejected() {
        let cfg = FastCodecConfig::for_normalized(4, 1, 0.5, 16);
        let bad = TokenSequence {
            tokens: vec![0, 0, 0, 99],
            vocab_size: 16,
        };
        assert!(matches!(fast_decode(&bad, &cfg), Err(Error::Codec(_))));
    }

    #[test]
    fn smooth_trajectory_compresses() {
        let (k, d, gamma) = (8, 7, 0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let smooth = |rng: &mut ChaCha8Rng| {
            let phase: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..6.28)).collect();
            let amp: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..0.6)).collect();
            chunk_from_fn(k, d, move |t, j| amp[j] * (0.3 * t as f64 + phase[j]).sin())
        };
        let corpus: Vec<ActionChunk> = (0..300).map(|_| smooth(&mut rng)).collect();
        let cfg = FastCodecConfig::for_normalized(k, d, gamma, 1024);
        let codec = FastCodec::fit(cfg, &corpus).unwrap();
        let probe = smooth(&mut rng);
        let raw = codec.symbols(&probe).unwrap().len();
        let tokens = codec.encode(&probe).unwrap().tokens.len();
        assert_eq!(raw, k * d);
        assert!(tokens < raw, "{tokens} tokens vs {raw} symbols");
    }

    #[test]
    fn decode_is_deterministic() {
        let cfg = FastCodecConfig::for_normalized(8, 3, 0.05, 200);
        let c = chunk_from_fn(8, 3, |t, j| ((t + j) as f64 * 0.2).cos() * 0.5);
        let a = fast_encode(&c, &cfg).unwrap();
        let b = fast_encode(&c, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            fast_decode(&a, &cfg).unwrap().values,
            fast_decode(&b, &cfg).unwrap().values
        );
    }
}
