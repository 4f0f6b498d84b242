//! Tape-based reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation as a node holding its forward value
//! and whatever it needs for the backward pass. Parameters are referenced
//! from a borrowed [`ParamSet`] rather than copied onto the tape.

use super::params::{ParamGrads, ParamId, ParamSet};
use super::rope::rotate_heads;
use super::tensor::{gemm, gemm_strided, MatRef, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Attention(Box<AttentionCache>),
    Rope {
        x: Var,
        base: f64,
        heads: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Rows {
        x: Var,
        start: usize,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    InfoNce {
        q: Var,
        k: Var,
        tau: f64,
        probs: Tensor,
    },
    Sum(Var),
    WeightedSum(Var, Tensor),
}

#[derive(Debug)]
struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    rope: Option<f64>,
    /// Rotated queries/keys when RoPE is on.
    rotated: Option<(Tensor, Tensor)>,
    /// Softmax weights, one `[s, s]` matrix per head.
    probs: Vec<Tensor>,
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Computation tape bound to a parameter set.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    attention_flops: u64,
}

/// Result of a backward pass.
pub struct Backprop {
    nodes: Vec<Option<Tensor>>,
    pub params: ParamGrads,
}

impl Backprop {
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
            param_nodes: vec![None; params.len()],
            attention_flops: 0,
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-adds spent in attention score and mixing products so far.
    pub fn attention_flops(&self) -> u64 {
        self.attention_flops
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-parameter node has a value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(name.to_string()));
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Input, "input")
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// `x · w (+ b)` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.rows() {
            return shape_err(format!(
                "affine input {:?} vs weight {:?}",
                xv.shape(),
                wv.shape()
            ));
        }
        let mut out = Tensor::zeros(xv.rows(), wv.cols());
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != (1, wv.cols()) {
                return shape_err(format!("affine bias {:?} for width {}", bv.shape(), wv.cols()));
            }
            for r in 0..out.rows() {
                out.row_mut(r).copy_from_slice(bv.row(0));
            }
        }
        gemm(MatRef::new(xv), MatRef::new(wv), out.data_mut(), b.is_some());
        self.push(out, Op::Affine { x, w, b }, "affine")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("add {:?} + {:?}", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.scale(s);
        self.push(out, Op::Scale(x, s), "scale")
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()))
            .collect();
        let out = Tensor::from_vec(xv.rows(), xv.cols(), data)?;
        self.push(out, Op::Gelu(x), "gelu")
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of shape `[1, d]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = xv.shape();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.shape() != (1, d) || bv.shape() != (1, d) {
            return shape_err(format!("layer norm params for width {d}"));
        }
        let mut xhat = Tensor::zeros(rows, d);
        let mut out = Tensor::zeros(rows, d);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(r);
            for c in 0..d {
                xh[c] = (row[c] - mean) * is;
            }
            let o = out.row_mut(r);
            for c in 0..d {
                o[c] = xh[c] * gv.data()[c] + bv.data()[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            "layer_norm",
        )
    }

    /// Multi-head scaled dot-product attention over already projected
    /// queries, keys and values. `mask[j] == false` hides key `j`. With
    /// `rope = Some(base)` rotary embeddings are applied per head to queries
    /// and keys using token positions `0..s`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        rope: Option<f64>,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (s, d) = qv.shape();
        if kv.shape() != (s, d) || vv.shape() != (s, d) {
            return shape_err(format!(
                "attention q {:?} k {:?} v {:?}",
                qv.shape(),
                kv.shape(),
                vv.shape()
            ));
        }
        if s == 0 {
            return Err(Error::Parameter("attention over an empty sequence".into()));
        }
        if heads == 0 || d % heads != 0 {
            return shape_err(format!("width {d} not divisible into {heads} heads"));
        }
        if let Some(m) = mask {
            if m.len() != s {
                return shape_err(format!("mask of length {} for {s} tokens", m.len()));
            }
        }
        let dh = d / heads;
        let rotated = match rope {
            Some(base) => Some((rotate_heads(qv, heads, base, false)?, rotate_heads(kv, heads, base, false)?)),
            None => None,
        };
        let (qr, kr) = match &rotated {
            Some((a, b)) => (a, b),
            None => (qv, kv),
        };
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(s, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let mut p = Tensor::zeros(s, s);
            gemm(
                MatRef::cols_slice(qr, h * dh, dh),
                MatRef::cols_slice(kr, h * dh, dh).t(),
                p.data_mut(),
                false,
            );
            for i in 0..s {
                let row = p.row_mut(i);
                let mut max = f64::NEG_INFINITY;
                for (j, x) in row.iter_mut().enumerate() {
                    if mask.is_some_and(|m| !m[j]) {
                        *x = f64::NEG_INFINITY;
                    } else {
                        *x *= scale;
                        max = max.max(*x);
                    }
                }
                let mut total = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    total += *x;
                }
                for x in row.iter_mut() {
                    *x /= total;
                }
            }
            gemm_strided(
                MatRef::new(&p),
                MatRef::cols_slice(vv, h * dh, dh),
                &mut out.data_mut()[h * dh..],
                d as isize,
                false,
            );
            probs.push(p);
        }
        self.attention_flops += (2 * heads * s * s * dh) as u64;
        let cache = AttentionCache {
            q,
            k,
            v,
            heads,
            rope,
            rotated,
            probs,
        };
        self.push(out, Op::Attention(Box::new(cache)), "attention")
    }

    /// Softmax weights of an attention node, one matrix per head.
    pub fn attention_probs(&self, v: Var) -> Option<&[Tensor]> {
        match &self.nodes[v.0].op {
            Op::Attention(c) => Some(&c.probs),
            _ => None,
        }
    }

    /// Rotary position embedding of each row `i` at position `i`, applied
    /// independently to each of `heads` column blocks.
    pub fn rope(&mut self, x: Var, base: f64, heads: usize) -> Result<Var> {
        let out = rotate_heads(self.value(x), heads, base, false)?;
        self.push(out, Op::Rope { x, base, heads }, "rope")
    }

    /// Row lookup `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let mut out = Tensor::zeros(ids.len(), tv.cols());
        for (r, &id) in ids.iter().enumerate() {
            if id >= tv.rows() {
                return Err(Error::Vocabulary {
                    id: id as u32,
                    size: tv.rows(),
                });
            }
            out.row_mut(r).copy_from_slice(tv.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            "gather",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return shape_err(format!("concat rows of width {} and {cols}", pv.cols()));
            }
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return shape_err(format!("concat cols of height {} and {rows}", pv.rows()));
            }
            cols += pv.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
                off += pv.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Rows `[start, start + len)`.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return shape_err(format!("rows {start}..{} of {}", start + len, xv.rows()));
        }
        let c = xv.cols();
        let out = Tensor::from_vec(len, c, xv.data()[start * c..(start + len) * c].to_vec())?;
        self.push(out, Op::Rows { x, start }, "rows")
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::Numeric("l2_normalize of a zero row".into()));
            }
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        self.push(out, Op::L2Normalize { x, norms }, "l2_normalize")
    }

    /// Mean InfoNCE loss of queries against keys, positives on the diagonal.
    pub fn info_nce(&mut self, q: Var, k: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
        }
        let (qv, kv) = (self.value(q), self.value(k));
        if qv.shape() != kv.shape() {
            return shape_err(format!("info_nce {:?} vs {:?}", qv.shape(), kv.shape()));
        }
        let b = qv.rows();
        if b == 0 {
            return Err(Error::Parameter("info_nce over an empty batch".into()));
        }
        let mut probs = Tensor::zeros(b, b);
        gemm(MatRef::new(qv), MatRef::new(kv).t(), probs.data_mut(), false);
        let mut loss = 0.0;
        for i in 0..b {
            let row = probs.row_mut(i);
            let mut max = f64::NEG_INFINITY;
            for x in row.iter_mut() {
                *x /= tau;
                max = max.max(*x);
            }
            let pos = row[i];
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            loss += max + total.ln() - pos;
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let out = Tensor::row_vector(vec![loss / b as f64]);
        self.push(out, Op::InfoNce { q, k, tau, probs }, "info_nce")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::row_vector(vec![s]), Op::Sum(x), "sum")
    }

    /// `sum(x ⊙ w)` for a constant `w` of the same shape.
    pub fn weighted_sum(&mut self, x: Var, w: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != w.shape() {
            return shape_err(format!("weighted sum {:?} vs {:?}", xv.shape(), w.shape()));
        }
        let s = xv.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        self.push(Tensor::row_vector(vec![s]), Op::WeightedSum(x, w), "weighted_sum")
    }

    /// Backpropagates from a scalar output.
    pub fn backward_scalar(&self, out: Var) -> Result<Backprop> {
        let shape = self.value(out).shape();
        if shape != (1, 1) {
            return shape_err(format!("backward from non-scalar {shape:?}"));
        }
        self.backward(vec![(out, Tensor::row_vector(vec![1.0]))])
    }

    /// Backpropagates the given output gradients through the whole tape.
    pub fn backward(&self, seeds: Vec<(Var, Tensor)>) -> Result<Backprop> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        for (v, g) in seeds {
            if self.value(v).shape() != g.shape() {
                return shape_err(format!(
                    "seed {:?} for node of shape {:?}",
                    g.shape(),
                    self.value(v).shape()
                ));
            }
            acc(&mut grads, v, g);
        }
        let mut params = ParamGrads::new(self.params.len());
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !g.is_finite() {
                return Err(Error::Numeric("backward pass".into()));
            }
            self.backprop_node(i, &g, &mut grads, &mut params)?;
            grads[i] = Some(g);
        }
        Ok(Backprop {
            nodes: grads,
            params,
        })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut ParamGrads,
    ) -> Result<()> {
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Param(id) => params.add(*id, g),
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                gemm(MatRef::new(g), MatRef::new(wv).t(), dx.data_mut(), false);
                let mut dw = Tensor::zeros(wv.rows(), wv.cols());
                gemm(MatRef::new(xv).t(), MatRef::new(g), dw.data_mut(), false);
                if let Some(b) = b {
                    acc(grads, *b, col_sums(g));
                }
                acc(grads, *x, dx);
                acc(grads, *w, dw);
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = Tensor::zeros(av.rows(), av.cols());
                gemm(MatRef::new(g), MatRef::new(bv).t(), da.data_mut(), false);
                let mut db = Tensor::zeros(bv.rows(), bv.cols());
                gemm(MatRef::new(av).t(), MatRef::new(g), db.data_mut(), false);
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Scale(x, s) => {
                let mut dx = g.clone();
                dx.scale(*s);
                acc(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v * v);
                    *d *= 0.5 * (1.0 + t) + 0.5 * v * dt;
                }
                acc(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let (rows, d) = xhat.shape();
                let mut dx = Tensor::zeros(rows, d);
                let mut dgamma = Tensor::zeros(1, d);
                let mut dbeta = Tensor::zeros(1, d);
                for r in 0..rows {
                    let (gr, xh) = (g.row(r), xhat.row(r));
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for c in 0..d {
                        let dxh = gr[c] * gv.data()[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[c];
                        dgamma.data_mut()[c] += gr[c] * xh[c];
                        dbeta.data_mut()[c] += gr[c];
                    }
                    let k = inv_std[r] / d as f64;
                    let out = dx.row_mut(r);
                    for c in 0..d {
                        let dxh = gr[c] * gv.data()[c];
                        out[c] = k * (d as f64 * dxh - sum_dxh - xh[c] * sum_dxh_xh);
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gamma, dgamma);
                acc(grads, *beta, dbeta);
            }
            Op::Attention(c) => self.backprop_attention(c, g, grads)?,
            Op::Rope { x, base, heads } => {
                acc(grads, *x, rotate_heads(g, *heads, *base, true)?);
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let mut dt = Tensor::zeros(tv.rows(), tv.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for (a, b) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *a += b;
                    }
                }
                acc(grads, *table, dt);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                let c = g.cols();
                for &p in parts {
                    let r = self.value(p).rows();
                    let part = Tensor::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec())?;
                    acc(grads, p, part);
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let mut part = Tensor::zeros(g.rows(), pc);
                    for r in 0..g.rows() {
                        part.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                    }
                    acc(grads, p, part);
                    off += pc;
                }
            }
            Op::Rows { x, start } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                let c = xv.cols();
                dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(grads, *x, dx);
            }
            Op::L2Normalize { x, norms } => {
                let y = self.nodes[i].value.as_ref().expect("normalized value");
                let mut dx = g.clone();
                for (r, &n) in norms.iter().enumerate() {
                    let yr = y.row(r);
                    let dot: f64 = yr.iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for (d, (&yv, &gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(g.row(r))) {
                        *d = (gv - yv * dot) / n;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::InfoNce { q, k, tau, probs } => {
                let b = probs.rows();
                let upstream = g.data()[0];
                let mut dlogits = probs.clone();
                for r in 0..b {
                    let v = dlogits.get(r, r) - 1.0;
                    dlogits.set(r, r, v);
                }
                dlogits.scale(upstream / (b as f64 * tau));
                let (qv, kv) = (self.value(*q), self.value(*k));
                let mut dq = Tensor::zeros(qv.rows(), qv.cols());
                gemm(MatRef::new(&dlogits), MatRef::new(kv), dq.data_mut(), false);
                let mut dk = Tensor::zeros(kv.rows(), kv.cols());
                gemm(MatRef::new(&dlogits).t(), MatRef::new(qv), dk.data_mut(), false);
                acc(grads, *q, dq);
                acc(grads, *k, dk);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                acc(grads, *x, Tensor::filled(xv.rows(), xv.cols(), g.data()[0]));
            }
            Op::WeightedSum(x, w) => {
                let mut dx = w.clone();
                dx.scale(g.data()[0]);
                acc(grads, *x, dx);
            }
        }
        Ok(())
    }

    fn backprop_attention(
        &self,
        c: &AttentionCache,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let (qv, kv, vv) = (self.value(c.q), self.value(c.k), self.value(c.v));
        let (qr, kr) = match &c.rotated {
            Some((a, b)) => (a, b),
            None => (qv, kv),
        };
        let (s, d) = qv.shape();
        let dh = d / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(s, d);
        let mut dk = Tensor::zeros(s, d);
        let mut dv = Tensor::zeros(s, d);
        let mut dp = Tensor::zeros(s, s);
        for (h, p) in c.probs.iter().enumerate() {
            let go = MatRef::cols_slice(g, h * dh, dh);
            gemm_strided(MatRef::new(p).t(), go, &mut dv.data_mut()[h * dh..], d as isize, false);
            gemm(go, MatRef::cols_slice(vv, h * dh, dh).t(), dp.data_mut(), false);
            for i in 0..s {
                let (pr, dr) = (p.row(i), dp.row_mut(i));
                let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                for (x, &pv) in dr.iter_mut().zip(pr) {
                    *x = pv * (*x - dot) * scale;
                }
            }
            gemm_strided(
                MatRef::new(&dp),
                MatRef::cols_slice(kr, h * dh, dh),
                &mut dq.data_mut()[h * dh..],
                d as isize,
                false,
            );
            gemm_strided(
                MatRef::new(&dp).t(),
                MatRef::cols_slice(qr, h * dh, dh),
                &mut dk.data_mut()[h * dh..],
                d as isize,
                false,
            );
        }
        if let Some(base) = c.rope {
            dq = rotate_heads(&dq, c.heads, base, true)?;
            dk = rotate_heads(&dk, c.heads, base, true)?;
        }
        acc(grads, c.q, dq);
        acc(grads, c.k, dk);
        acc(grads, c.v, dv);
        Ok(())
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn col_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (a, b) in out.data_mut().iter_mut().zip(g.row(r)) {
            *a += b;
        }
    }
    out
}
