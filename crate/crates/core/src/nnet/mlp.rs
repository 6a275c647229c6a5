use rand::Rng;

use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Layer {
    w: ParamId,
    b: ParamId,
    inp: usize,
    out: usize,
}

/// Affine → tanh → … → affine network over flat vectors.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    want_input_grad: bool,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input to every layer; entry 0 is the network input.
    inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[inline]
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n).zip(b)) {
        let mut acc = *bias;
        for (a, v) in row.iter().zip(x) {
            acc += a * v;
        }
        *o = acc;
    }
}

/// Accumulates `dW += dy ⊗ x`, `db += dy` and returns `Wᵀ dy`.
#[inline]
pub(crate) fn affine_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Vec<f64> {
    let n = x.len();
    let mut dx = if want_dx { vec![0.0; n] } else { Vec::new() };
    for (j, g) in dy.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        db[j] += g;
        let row = &mut dw[j * n..(j + 1) * n];
        for (d, v) in row.iter_mut().zip(x) {
            *d += g * v;
        }
        if want_dx {
            let wr = &w[j * n..(j + 1) * n];
            for (d, a) in dx.iter_mut().zip(wr) {
                *d += g * a;
            }
        }
    }
    dx
}

impl Mlp {
    /// Registers `sizes.len() − 1` affine layers under `prefix.l{i}.{w,b}`
    /// with Glorot-uniform weights and zero biases.
    pub fn new<R: Rng>(params: &mut ParamSet, prefix: &str, sizes: &[usize], rng: &mut R) -> Mlp {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, io)| Layer {
                w: params.add_xavier(format!("{prefix}.l{i}.w"), io[1], io[0], rng),
                b: params.add_zeros(format!("{prefix}.l{i}.b"), vec![io[1]]),
                inp: io[0],
                out: io[1],
            })
            .collect();
        Mlp {
            layers,
            want_input_grad: true,
        }
    }

    /// Skips the input-gradient product when the input is a constant.
    pub fn without_input_grad(mut self) -> Self {
        self.want_input_grad = false;
        self
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inp
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("non-empty").out
    }

    /// Parameter ids of the final affine layer (weights, bias).
    pub fn last_layer(&self) -> (ParamId, ParamId) {
        let l = self.layers.last().expect("non-empty");
        (l.w, l.b)
    }

    pub fn layer_ids(&self) -> Vec<(ParamId, ParamId)> {
        self.layers.iter().map(|l| (l.w, l.b)).collect()
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Result<MlpTape> {
        if x.len() != self.input_size() {
            return Err(Error::shape(format!(
                "MLP input has {} values, expected {}",
                x.len(),
                self.input_size()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; l.out];
            affine(params.get(l.w), params.get(l.b), &cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(cur);
            cur = next;
        }
        Ok(MlpTape {
            inputs,
            output: cur,
        })
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient.
    pub fn backward(
        &self,
        params: &ParamSet,
        tape: &MlpTape,
        upstream: &[f64],
        grads: &mut ParamSet,
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_size() {
            return Err(Error::shape(format!(
                "upstream gradient has {} values, expected {}",
                upstream.len(),
                self.output_size()
            )));
        }
        let mut dy = upstream.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = &tape.inputs[i];
            let (dw, db) = grads.pair_mut(l.w, l.b);
            let dx = affine_backward(params.get(l.w), x, &dy, dw, db, i > 0 || self.want_input_grad);
            dy = if i > 0 {
                // x is tanh output of the previous layer
                dx.iter().zip(x).map(|(g, y)| g * (1.0 - y * y)).collect()
            } else {
                dx
            };
        }
        Ok(dy)
    }
}

pub fn mlp_apply(mlp: &Mlp, params: &ParamSet, input: &[f64]) -> Result<Vec<f64>> {
    Ok(mlp.forward(params, input)?.output)
}

/// Input gradient and parameter gradients for one upstream gradient.
pub fn mlp_backward(
    mlp: &Mlp,
    params: &ParamSet,
    input: &[f64],
    upstream: &[f64],
) -> Result<(Vec<f64>, ParamSet)> {
    let tape = mlp.forward(params, input)?;
    let mut grads = params.zeros_like();
    let dx = mlp.backward(params, &tape, upstream, &mut grads)?;
    Ok((dx, grads))
}
