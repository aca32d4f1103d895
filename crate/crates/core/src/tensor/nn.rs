//! Layers built from tape primitives.

use alloc::format;
use alloc::vec::Vec;

use super::{NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::Rng;

/// `y = x Wᵀ + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(params: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool, rng: &mut Rng) -> Self {
        let weight = params.glorot(format!("{name}.weight"), output, input, rng);
        let bias = bias.then(|| params.zeros(format!("{name}.bias"), &[output]));
        Linear { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: NodeId) -> NodeId {
        let w = tape.param(self.weight);
        let b = self.bias.map(|b| tape.param(b));
        tape.affine(x, w, b)
    }

    pub fn output_dim(&self, params: &ParamStore) -> usize {
        params.value(self.weight).shape()[0]
    }
}

/// Stack of rectified-linear layers with dropout after each.
#[derive(Debug, Clone, PartialEq)]
pub struct Ffn {
    pub layers: Vec<Linear>,
    pub dropout: f64,
}

impl Ffn {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        input: usize,
        width: usize,
        depth: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(depth);
        let mut dim = input;
        for k in 0..depth {
            layers.push(Linear::new(params, &format!("{name}.{k}"), dim, width, true, rng));
            dim = width;
        }
        Ffn { layers, dropout }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, mut x: NodeId) -> NodeId {
        for layer in &self.layers {
            let y = layer.forward(tape, x);
            let y = tape.relu(y);
            x = tape.dropout(y, self.dropout);
        }
        x
    }
}

/// Single-direction LSTM over a sequence of vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    /// `[4H × (input + H)]`, gate order input, forget, output, candidate.
    pub weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(params: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let weight = params.glorot(format!("{name}.weight"), 4 * hidden, input + hidden, rng);
        let bias = params.zeros(format!("{name}.bias"), &[4 * hidden]);
        Lstm { weight, bias, hidden }
    }

    /// Runs over `xs` (reversed when `backward` is set) and returns hidden
    /// states aligned with the input positions.
    pub fn forward(&self, tape: &mut Tape<'_>, xs: &[NodeId], backward: bool) -> Vec<NodeId> {
        let h_dim = self.hidden;
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let mut h = tape.constant(Tensor::zeros(&[h_dim]));
        let mut c = h;
        let mut out = alloc::vec![h; xs.len()];
        let order: Vec<usize> = if backward { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
        for t in order {
            let inp = tape.concat(&[xs[t], h]);
            let z = tape.affine(inp, w, Some(b));
            let zi = tape.slice(z, 0, h_dim);
            let zf = tape.slice(z, h_dim, h_dim);
            let zo = tape.slice(z, 2 * h_dim, h_dim);
            let zg = tape.slice(z, 3 * h_dim, h_dim);
            let i = tape.sigmoid(zi);
            let f = tape.sigmoid(zf);
            let o = tape.sigmoid(zo);
            let g = tape.tanh(zg);
            let keep = tape.mul(f, c);
            let write = tape.mul(i, g);
            c = tape.add(keep, write);
            let tc = tape.tanh(c);
            h = tape.mul(o, tc);
            out[t] = h;
        }
        out
    }
}

/// Forward and backward LSTMs whose states are concatenated per position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new(params: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        BiLstm {
            forward: Lstm::new(params, &format!("{name}.fwd"), input, hidden, rng),
            backward: Lstm::new(params, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn run(&self, tape: &mut Tape<'_>, xs: &[NodeId]) -> Vec<NodeId> {
        let f = self.forward.forward(tape, xs, false);
        let b = self.backward.forward(tape, xs, true);
        f.iter().zip(&b).map(|(&f, &b)| tape.concat(&[f, b])).collect()
    }
}

/// `out = x + g ⊙ (h − x)` with `g = σ(W [x; h] + b)`, i.e. `g·h + (1−g)·x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Highway {
    pub gate: Linear,
}

impl Highway {
    pub fn new(params: &mut ParamStore, name: &str, dim: usize, rng: &mut Rng) -> Self {
        Highway { gate: Linear::new(params, &format!("{name}.gate"), 2 * dim, dim, true, rng) }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: NodeId, h: NodeId) -> NodeId {
        let xh = tape.concat(&[x, h]);
        let z = self.gate.forward(tape, xh);
        let g = tape.sigmoid(z);
        let diff = tape.sub(h, x);
        let gated = tape.mul(g, diff);
        tape.add(x, gated)
    }
}
