use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{pool_weight, Backbone, Encoding, HiddenStates, PolicyConfig};
use crate::error::{Error, Result};
use crate::nnet::{loss_and_grad, LossTarget, ParamId, ParamSet};
use crate::rng::fnv1a;
use crate::types::{AuxKind, AuxPrediction, ImageBuffer, Observation};

/// Cells per image side.
pub const GRID: usize = 4;
pub const CELLS: usize = GRID * GRID;
/// Per-view feature length: mean RGB of every cell.
pub const CELL_FEATURES: usize = CELLS * 3;
/// Input gain on cell features. A 5×5 blob lights about a tenth of a
/// 16×16 cell, so raw means sit near 0.1.
pub const CELL_GAIN: f64 = 8.0;
/// Keypoint features per view: centroid (x, y) and mass per channel.
pub const KEYPOINT_FEATURES: usize = 9;
/// Patch-like tokens per view: one per cell plus the keypoint token.
pub const VIEW_TOKENS: usize = CELLS + 1;
/// Hash buckets for instruction words.
pub const WORD_BUCKETS: usize = 64;

/// Mean RGB over each cell of a `GRID × GRID` partition, scaled to [0, 1].
/// Cell-major, then channel.
pub fn pooled_cells(img: &ImageBuffer) -> Vec<f64> {
    let mut out = vec![0.0; CELL_FEATURES];
    for gr in 0..GRID {
        let (r0, r1) = (gr * img.height / GRID, (gr + 1) * img.height / GRID);
        for gc in 0..GRID {
            let (c0, c1) = (gc * img.width / GRID, (gc + 1) * img.width / GRID);
            let mut acc = [0u64; 3];
            for r in r0..r1 {
                for c in c0..c1 {
                    let p = img.pixel(r, c);
                    for ch in 0..3 {
                        acc[ch] += p[ch] as u64;
                    }
                }
            }
            let n = ((r1 - r0) * (c1 - c0)).max(1) as f64;
            let cell = gr * GRID + gc;
            for ch in 0..3 {
                out[cell * 3 + ch] = acc[ch] as f64 / (255.0 * n);
            }
        }
    }
    out
}

/// Spatial soft-argmax per channel: intensity-weighted centroid in
/// [-1, 1] image coordinates, then mass in units of a 5×5 saturated blob.
/// Cell means cannot place a blob inside its cell; these can.
pub fn keypoints(img: &ImageBuffer) -> [f64; KEYPOINT_FEATURES] {
    let mut m = [0u64; 3];
    let mut sx = [0u64; 3];
    let mut sy = [0u64; 3];
    for r in 0..img.height {
        for c in 0..img.width {
            let p = img.pixel(r, c);
            for ch in 0..3 {
                let v = p[ch] as u64;
                m[ch] += v;
                sx[ch] += v * c as u64;
                sy[ch] += v * r as u64;
            }
        }
    }
    let mut out = [0.0; KEYPOINT_FEATURES];
    for ch in 0..3 {
        if m[ch] > 0 {
            let mx = sx[ch] as f64 / m[ch] as f64;
            let my = sy[ch] as f64 / m[ch] as f64;
            out[ch * 2] = 2.0 * (mx + 0.5) / img.width.max(1) as f64 - 1.0;
            out[ch * 2 + 1] = 2.0 * (my + 0.5) / img.height.max(1) as f64 - 1.0;
        }
        let area = (img.width * img.height).max(1) as f64 / (64.0 * 64.0);
        out[6 + ch] = m[ch] as f64 / (255.0 * 25.0 * area);
    }
    out
}

/// Lowercased alphanumeric words of an instruction, hashed into buckets.
pub fn instruction_buckets(text: &str) -> Vec<usize> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| (fnv1a(w.to_lowercase().as_bytes()) % WORD_BUCKETS as u64) as usize)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    /// Language-aligned auxiliary output: instruction-bag logits.
    Vlm,
    /// Future-observation auxiliary output: next-frame cell features.
    Wm,
}

#[derive(Debug, Clone)]
enum AuxParams {
    Lang { w: ParamId, b: ParamId },
    Future { cells: ParamId, ctx: ParamId, b: ParamId },
}

/// Grid-pooling image encoder with hashed bag-of-words instruction tokens
/// and learned query slots.
#[derive(Debug, Clone)]
pub struct ToyBackbone {
    flavor: Flavor,
    d: usize,
    k: usize,
    patch_w: ParamId,
    patch_b: ParamId,
    kp_w: ParamId,
    kp_b: ParamId,
    words: ParamId,
    slots: ParamId,
    aux: AuxParams,
}

struct Cache {
    view_names: Vec<String>,
    cells: Vec<Vec<f64>>,
    keypoints: Vec<[f64; KEYPOINT_FEATURES]>,
    buckets: Vec<usize>,
    mean_patch: Vec<f64>,
    pooled: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-a..=a)).collect()
}

impl ToyBackbone {
    pub fn new(flavor: Flavor, cfg: &PolicyConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d;
        let a = (6.0 / (d + 3) as f64).sqrt();
        let patch_w = params.add("backbone.patch.w", vec![CELLS, d, 3], uniform(rng, CELLS * d * 3, a));
        let patch_b = params.add_zeros("backbone.patch.b", vec![d]);
        let kp_w = params.add_xavier("backbone.keypoint.w", d, KEYPOINT_FEATURES, rng);
        let kp_b = params.add_zeros("backbone.keypoint.b", vec![d]);
        let words = params.add_xavier("backbone.words", WORD_BUCKETS, d, rng);
        let slots = params.add_xavier("backbone.slots", cfg.k, d, rng);
        let aux = match flavor {
            Flavor::Vlm => AuxParams::Lang {
                w: params.add_xavier("backbone.lang.w", WORD_BUCKETS, d, rng),
                b: params.add_zeros("backbone.lang.b", vec![WORD_BUCKETS]),
            },
            Flavor::Wm => {
                let eye = (0..CELL_FEATURES * CELL_FEATURES)
                    .map(|i| if i % (CELL_FEATURES + 1) == 0 { 1.0 } else { 0.0 })
                    .collect();
                AuxParams::Future {
                    cells: params.add("backbone.future.cells", vec![CELL_FEATURES, CELL_FEATURES], eye),
                    ctx: params.add_zeros("backbone.future.ctx", vec![CELL_FEATURES, d]),
                    b: params.add_zeros("backbone.future.b", vec![CELL_FEATURES]),
                }
            }
        };
        ToyBackbone {
            flavor,
            d,
            k: cfg.k,
            patch_w,
            patch_b,
            kp_w,
            kp_b,
            words,
            slots,
            aux,
        }
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }
}

fn cache(enc: &Encoding) -> Result<&Cache> {
    enc.cache
        .downcast_ref::<Cache>()
        .ok_or_else(|| Error::Integrity("encoding was not produced by this backbone".into()))
}

impl Backbone for ToyBackbone {
    fn id(&self) -> &str {
        match self.flavor {
            Flavor::Vlm => "vlm",
            Flavor::Wm => "wm",
        }
    }

    fn encode(&self, params: &ParamSet, obs: &Observation) -> Result<Encoding> {
        if obs.views.is_empty() {
            return Err(Error::Validation("views: empty".into()));
        }
        let d = self.d;
        let view_names: Vec<String> = obs.views.keys().cloned().collect();
        let cells: Vec<Vec<f64>> = obs.views.values().map(pooled_cells).collect();
        let kps: Vec<[f64; KEYPOINT_FEATURES]> = obs.views.values().map(keypoints).collect();
        let buckets = instruction_buckets(&obs.instruction);
        let n_patch = cells.len() * VIEW_TOKENS;
        let n_ctx = n_patch + buckets.len();
        let mut tokens = vec![0.0; (n_ctx + self.k) * d];

        let pw = params.get(self.patch_w);
        let pb = params.get(self.patch_b);
        for (v, c) in cells.iter().enumerate() {
            for j in 0..CELLS {
                let row = &mut tokens[(v * VIEW_TOKENS + j) * d..(v * VIEW_TOKENS + j + 1) * d];
                let cj = &c[j * 3..j * 3 + 3];
                let wj = &pw[j * d * 3..(j + 1) * d * 3];
                for (i, t) in row.iter_mut().enumerate() {
                    let w = &wj[i * 3..i * 3 + 3];
                    *t = pb[i] + CELL_GAIN * (w[0] * cj[0] + w[1] * cj[1] + w[2] * cj[2]);
                }
            }
        }
        let (kw, kb) = (params.get(self.kp_w), params.get(self.kp_b));
        for (v, kp) in kps.iter().enumerate() {
            let t = (v * VIEW_TOKENS + CELLS) * d;
            for (i, row) in tokens[t..t + d].iter_mut().zip(kw.chunks_exact(KEYPOINT_FEATURES)) {
                *i = row.iter().zip(kp).map(|(a, x)| a * x).sum::<f64>();
            }
            for (x, b) in tokens[t..t + d].iter_mut().zip(kb) {
                *x += b;
            }
        }
        let emb = params.get(self.words);
        for (i, b) in buckets.iter().enumerate() {
            tokens[(n_patch + i) * d..(n_patch + i + 1) * d].copy_from_slice(&emb[b * d..(b + 1) * d]);
        }
        let mut pooled = vec![0.0; d];
        let mut mean_patch = vec![0.0; d];
        for (r, row) in tokens[..n_ctx * d].chunks_exact(d).enumerate() {
            for i in 0..d {
                pooled[i] += row[i];
                if r < n_patch {
                    mean_patch[i] += row[i];
                }
            }
        }
        pooled.iter_mut().for_each(|v| *v *= pool_weight(n_ctx));
        mean_patch.iter_mut().for_each(|v| *v /= n_patch as f64);
        let slots = params.get(self.slots);
        for s in 0..self.k {
            let row = &mut tokens[(n_ctx + s) * d..(n_ctx + s + 1) * d];
            for i in 0..d {
                row[i] = slots[s * d + i] + pooled[i];
            }
        }

        let aux = match &self.aux {
            AuxParams::Lang { w, b } => {
                let mut logits = params.get(*b).to_vec();
                let w = params.get(*w);
                for (o, row) in logits.iter_mut().zip(w.chunks_exact(d)) {
                    *o += row.iter().zip(&mean_patch).map(|(a, x)| a * x).sum::<f64>();
                }
                AuxPrediction {
                    kind: AuxKind::LanguageLogits,
                    shape: vec![WORD_BUCKETS],
                    payload: logits,
                }
            }
            AuxParams::Future { cells: a, ctx, b } => {
                let (a, ctx, b) = (params.get(*a), params.get(*ctx), params.get(*b));
                let mut payload = Vec::with_capacity(cells.len() * CELL_FEATURES);
                for c in &cells {
                    for o in 0..CELL_FEATURES {
                        let mut acc = b[o];
                        acc += a[o * CELL_FEATURES..(o + 1) * CELL_FEATURES]
                            .iter()
                            .zip(c)
                            .map(|(w, x)| w * x)
                            .sum::<f64>();
                        acc += ctx[o * d..(o + 1) * d]
                            .iter()
                            .zip(&pooled)
                            .map(|(w, x)| w * x)
                            .sum::<f64>();
                        payload.push(acc);
                    }
                }
                AuxPrediction {
                    kind: AuxKind::FutureFeatures,
                    shape: vec![cells.len(), CELL_FEATURES],
                    payload,
                }
            }
        };

        Ok(Encoding {
            hidden: HiddenStates {
                d,
                tokens,
                patch_count: n_patch,
                instruction_count: buckets.len(),
                slot_count: self.k,
            },
            aux,
            cache: Box::new(Cache {
                view_names,
                cells,
                keypoints: kps,
                buckets,
                mean_patch,
                pooled,
            }),
        })
    }

    fn aux_loss(
        &self,
        enc: &Encoding,
        _obs: &Observation,
        future: Option<&Observation>,
    ) -> Result<Option<(f64, Vec<f64>)>> {
        let c = cache(enc)?;
        match self.flavor {
            Flavor::Vlm => {
                if c.buckets.is_empty() {
                    return Ok(None);
                }
                let n = c.buckets.len() as f64;
                let mut loss = 0.0;
                let mut grad = vec![0.0; WORD_BUCKETS];
                for b in &c.buckets {
                    let (l, g) = loss_and_grad(&enc.aux.payload, LossTarget::CrossEntropy(*b))?;
                    loss += l / n;
                    for (a, v) in grad.iter_mut().zip(g) {
                        *a += v / n;
                    }
                }
                Ok(Some((loss, grad)))
            }
            Flavor::Wm => {
                let Some(next) = future else { return Ok(None) };
                let names: Vec<&String> = next.views.keys().collect();
                if names.len() != c.view_names.len() || names.iter().zip(&c.view_names).any(|(a, b)| *a != b) {
                    return Err(Error::shape("future observation has different views"));
                }
                let target: Vec<f64> = next.views.values().flat_map(pooled_cells).collect();
                loss_and_grad(&enc.aux.payload, LossTarget::Mse(&target)).map(Some)
            }
        }
    }

    fn backward(
        &self,
        params: &ParamSet,
        enc: &Encoding,
        d_tokens: &[f64],
        d_aux: Option<&[f64]>,
        grads: &mut ParamSet,
    ) -> Result<()> {
        let c = cache(enc)?;
        let h = &enc.hidden;
        let d = self.d;
        if d_tokens.len() != h.tokens.len() {
            return Err(Error::shape("token gradient does not match hidden states"));
        }
        let n_patch = h.patch_count;
        let n_ctx = h.context_count();
        let mut g_ctx = d_tokens[..n_ctx * d].to_vec();
        let mut d_pooled = vec![0.0; d];
        {
            let ds = grads.get_mut(self.slots);
            for s in 0..self.k {
                let g = &d_tokens[(n_ctx + s) * d..(n_ctx + s + 1) * d];
                for i in 0..d {
                    ds[s * d + i] += g[i];
                    d_pooled[i] += g[i];
                }
            }
        }
        if let Some(da) = d_aux {
            if da.len() != enc.aux.payload.len() {
                return Err(Error::shape("aux gradient does not match aux payload"));
            }
            match &self.aux {
                AuxParams::Lang { w, b } => {
                    let mut d_mean = vec![0.0; d];
                    let wv = params.get(*w);
                    let (dw, db) = grads.pair_mut(*w, *b);
                    for (o, g) in da.iter().enumerate() {
                        db[o] += g;
                        for i in 0..d {
                            dw[o * d + i] += g * c.mean_patch[i];
                            d_mean[i] += g * wv[o * d + i];
                        }
                    }
                    for row in g_ctx[..n_patch * d].chunks_exact_mut(d) {
                        for (a, g) in row.iter_mut().zip(&d_mean) {
                            *a += g / n_patch as f64;
                        }
                    }
                }
                AuxParams::Future { cells: a, ctx, b } => {
                    let ctx_v = params.get(*ctx).to_vec();
                    for (v, cells) in c.cells.iter().enumerate() {
                        let g = &da[v * CELL_FEATURES..(v + 1) * CELL_FEATURES];
                        {
                            let dg = grads.get_mut(*a);
                            for o in 0..CELL_FEATURES {
                                for (x, cv) in dg[o * CELL_FEATURES..(o + 1) * CELL_FEATURES]
                                    .iter_mut()
                                    .zip(cells)
                                {
                                    *x += g[o] * cv;
                                }
                            }
                        }
                        let (dctx, db) = grads.pair_mut(*ctx, *b);
                        for o in 0..CELL_FEATURES {
                            db[o] += g[o];
                            for i in 0..d {
                                dctx[o * d + i] += g[o] * c.pooled[i];
                                d_pooled[i] += g[o] * ctx_v[o * d + i];
                            }
                        }
                    }
                }
            }
        }
        for row in g_ctx.chunks_exact_mut(d) {
            for (a, g) in row.iter_mut().zip(&d_pooled) {
                *a += g * pool_weight(n_ctx);
            }
        }
        {
            let (dw, db) = grads.pair_mut(self.patch_w, self.patch_b);
            for (v, cells) in c.cells.iter().enumerate() {
                for j in 0..CELLS {
                    let g = &g_ctx[(v * VIEW_TOKENS + j) * d..(v * VIEW_TOKENS + j + 1) * d];
                    let cj = &cells[j * 3..j * 3 + 3];
                    let dwj = &mut dw[j * d * 3..(j + 1) * d * 3];
                    for i in 0..d {
                        db[i] += g[i];
                        for ch in 0..3 {
                            dwj[i * 3 + ch] += g[i] * CELL_GAIN * cj[ch];
                        }
                    }
                }
            }
        }
        {
            let (dw, db) = grads.pair_mut(self.kp_w, self.kp_b);
            for (v, kp) in c.keypoints.iter().enumerate() {
                let g = &g_ctx[(v * VIEW_TOKENS + CELLS) * d..(v * VIEW_TOKENS + CELLS + 1) * d];
                for i in 0..d {
                    db[i] += g[i];
                    for (w, x) in dw[i * KEYPOINT_FEATURES..(i + 1) * KEYPOINT_FEATURES].iter_mut().zip(kp) {
                        *w += g[i] * x;
                    }
                }
            }
        }
        let de = grads.get_mut(self.words);
        for (t, b) in c.buckets.iter().enumerate() {
            let g = &g_ctx[(n_patch + t) * d..(n_patch + t + 1) * d];
            for i in 0..d {
                de[b * d + i] += g[i];
            }
        }
        Ok(())
    }
}
