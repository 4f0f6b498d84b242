//! Transformer building blocks on top of [`Graph`].

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::Result;

/// Glorot-uniform initialised `[rows, cols]` tensor.
pub fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches data")
}

/// Small-normal-ish table for embeddings, uniform in `[-scale, scale)`.
pub fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches data")
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = ps.add(format!("{name}.w"), glorot(rng, input, output))?;
        let b = if bias {
            Some(ps.add(format!("{name}.b"), Tensor::zeros(1, output))?)
        } else {
            None
        };
        Ok(Linear {
            w,
            b,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.affine(x, w, b)
    }

    pub fn param_count(input: usize, output: usize, bias: bool) -> usize {
        input * output + if bias { output } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: ps.add(format!("{name}.gamma"), Tensor::filled(1, d, 1.0))?,
            beta: ps.add(format!("{name}.beta"), Tensor::zeros(1, d))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta)
    }
}

/// Multi-head self-attention with optional rotary positions.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub rope: Option<f64>,
}

impl SelfAttention {
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        d: usize,
        heads: usize,
        rope: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(SelfAttention {
            q: Linear::new(ps, &format!("{name}.q"), d, d, true, rng)?,
            k: Linear::new(ps, &format!("{name}.k"), d, d, true, rng)?,
            v: Linear::new(ps, &format!("{name}.v"), d, d, true, rng)?,
            o: Linear::new(ps, &format!("{name}.o"), d, d, true, rng)?,
            heads,
            rope,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, x)?;
        let v = self.v.forward(g, x)?;
        let a = g.attention(q, k, v, self.heads, self.rope, mask)?;
        self.o.forward(g, a)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, d: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(ps, &format!("{name}.up"), d, hidden, true, rng)?,
            down: Linear::new(ps, &format!("{name}.down"), hidden, d, true, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h)?;
        self.down.forward(g, h)
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + ffn(ln(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl TransformerBlock {
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        d: usize,
        heads: usize,
        rope: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(TransformerBlock {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d)?,
            attn: SelfAttention::new(ps, &format!("{name}.attn"), d, heads, rope, rng)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d)?,
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), d, 4 * d, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let h = self.attn.forward(g, h, mask)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, x)?;
        let h = self.ffn.forward(g, h)?;
        g.add(x, h)
    }

    /// Scalars in one block of width `d`.
    pub fn param_count(d: usize) -> usize {
        4 * Linear::param_count(d, d, true)
            + Linear::param_count(d, 4 * d, true)
            + Linear::param_count(4 * d, d, true)
            + 4 * d
    }
}
