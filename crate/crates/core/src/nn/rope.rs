//! Rotary position embedding.
//!
//! A width-`d` vector is split into `d / 2` planes; plane `k` pairs
//! coordinates `k` and `k + d / 2` and is rotated by `pos / base^(2k / d)`.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// Rotation angle of plane `k` at position `pos` for width `d`.
pub fn rope_angle(pos: usize, k: usize, d: usize, base: f64) -> f64 {
    pos as f64 / base.powf(2.0 * k as f64 / d as f64)
}

/// Rotates `row` in place as if it sat at position `pos`. `inverse`
/// applies the transposed rotation.
pub fn rotate_row(row: &mut [f64], pos: usize, base: f64, inverse: bool) {
    let d = row.len();
    let half = d / 2;
    for k in 0..half {
        let theta = rope_angle(pos, k, d, base);
        let (s, c) = theta.sin_cos();
        let s = if inverse { -s } else { s };
        let (a, b) = (row[k], row[k + half]);
        row[k] = a * c - b * s;
        row[k + half] = a * s + b * c;
    }
}

/// Rotates plane `k` of `row` by `angles[k]`.
pub fn rotate_by(row: &mut [f64], angles: &[f64]) {
    let half = row.len() / 2;
    for (k, &theta) in angles.iter().enumerate().take(half) {
        let (s, c) = theta.sin_cos();
        let (a, b) = (row[k], row[k + half]);
        row[k] = a * c - b * s;
        row[k + half] = a * s + b * c;
    }
}

/// Rotates row `i` of `t` to position `i`.
pub fn rope_rotate(t: &Tensor, base: f64) -> Result<Tensor> {
    rotate_heads(t, 1, base, false)
}

/// Applies RoPE independently within each of `heads` column blocks.
pub(crate) fn rotate_heads(t: &Tensor, heads: usize, base: f64, inverse: bool) -> Result<Tensor> {
    let d = t.cols();
    if heads == 0 || d % heads != 0 || (d / heads) % 2 != 0 {
        return Err(Error::Shape(format!(
            "rotary embedding needs an even per-head width, got {d} over {heads} heads"
        )));
    }
    let dh = d / heads;
    let mut out = t.clone();
    for i in 0..out.rows() {
        for block in out.row_mut(i).chunks_mut(dh) {
            rotate_row(block, i, base, inverse);
        }
    }
    Ok(out)
}
