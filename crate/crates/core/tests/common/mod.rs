//! Brute-force memoized recursions for the classical measures.

#![allow(dead_code)]

use std::collections::HashMap;

use omnitraj::data::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_seq(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<Point> {
    let n = rng.gen_range(1..=max_len);
    (0..n).map(|_| Point::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))).collect()
}

pub fn pairs(count: usize, max_len: usize, seed: u64) -> Vec<(Vec<Point>, Vec<Point>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (random_seq(&mut rng, max_len), random_seq(&mut rng, max_len))).collect()
}

pub fn dtw_oracle(a: &[Point], b: &[Point]) -> f64 {
    fn go(a: &[Point], b: &[Point], i: usize, j: usize, memo: &mut HashMap<(usize, usize), f64>) -> f64 {
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let c = a[i].dist(b[j]);
        let v = match (i, j) {
            (0, 0) => c,
            (0, _) => c + go(a, b, 0, j - 1, memo),
            (_, 0) => c + go(a, b, i - 1, 0, memo),
            _ => {
                let best = go(a, b, i - 1, j, memo)
                    .min(go(a, b, i, j - 1, memo))
                    .min(go(a, b, i - 1, j - 1, memo));
                c + best
            }
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, a.len() - 1, b.len() - 1, &mut HashMap::new())
}

pub fn frechet_oracle(a: &[Point], b: &[Point]) -> f64 {
    fn go(a: &[Point], b: &[Point], i: usize, j: usize, memo: &mut HashMap<(usize, usize), f64>) -> f64 {
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let c = a[i].dist(b[j]);
        let v = match (i, j) {
            (0, 0) => c,
            (0, _) => c.max(go(a, b, 0, j - 1, memo)),
            (_, 0) => c.max(go(a, b, i - 1, 0, memo)),
            _ => c.max(
                go(a, b, i - 1, j, memo)
                    .min(go(a, b, i, j - 1, memo))
                    .min(go(a, b, i - 1, j - 1, memo)),
            ),
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, a.len() - 1, b.len() - 1, &mut HashMap::new())
}

/// Edit distance over prefixes `a[..i]`, `b[..j]`.
pub fn edr_oracle(a: &[Point], b: &[Point], eps: f64) -> usize {
    fn go(a: &[Point], b: &[Point], i: usize, j: usize, eps: f64, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let (p, q) = (a[i - 1], b[j - 1]);
        let matched = (p.x - q.x).abs() <= eps && (p.y - q.y).abs() <= eps;
        let v = (go(a, b, i - 1, j - 1, eps, memo) + usize::from(!matched))
            .min(go(a, b, i - 1, j, eps, memo) + 1)
            .min(go(a, b, i, j - 1, eps, memo) + 1);
        memo.insert((i, j), v);
        v
    }
    go(a, b, a.len(), b.len(), eps, &mut HashMap::new())
}

pub fn hausdorff_oracle(a: &[Point], b: &[Point]) -> f64 {
    let directed = |x: &[Point], y: &[Point]| {
        x.iter()
            .map(|p| y.iter().map(|q| p.dist(*q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}
