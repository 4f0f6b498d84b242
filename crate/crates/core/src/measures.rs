//! Classical trajectory distances: DTW, EDR, Hausdorff and discrete Fréchet.
//!
//! All four run in O(|a|·|b|) time and O(min) memory. They serve both as
//! retrieval baselines and as references for the learned embeddings.

use std::io::{Read, Write};

use crate::data::Point;
use crate::error::{param_err, Error, Result};
use crate::par::Exec;

/// Default EDR match tolerance in frame-normalized units.
pub const DEFAULT_EDR_EPS: f64 = 0.25;

fn check_non_empty(a: &[Point], b: &[Point]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return param_err("distance measures need non-empty sequences");
    }
    Ok(())
}

/// Dynamic time warping with Euclidean ground distance.
pub fn dtw(a: &[Point], b: &[Point]) -> Result<f64> {
    check_non_empty(a, b)?;
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![0.0; m];
    for (i, pa) in a.iter().enumerate() {
        for j in 0..m {
            let c = pa.dist(b[j]);
            cur[j] = if i == 0 && j == 0 {
                c
            } else {
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if j > 0 { prev[j - 1] } else { f64::INFINITY };
                c + prev[j].min(left).min(diag)
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Edit distance on real sequences: two points match when both coordinate
/// differences are within `eps`.
pub fn edr(a: &[Point], b: &[Point], eps: f64) -> Result<usize> {
    check_non_empty(a, b)?;
    if eps < 0.0 {
        return param_err("EDR tolerance must be non-negative");
    }
    let m = b.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for (i, pa) in a.iter().enumerate() {
        cur[0] = i + 1;
        for j in 1..=m {
            let pb = b[j - 1];
            let sub = usize::from(!((pa.x - pb.x).abs() <= eps && (pa.y - pb.y).abs() <= eps));
            cur[j] = (prev[j - 1] + sub).min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

fn directed_hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let mut worst: f64 = 0.0;
    for pa in a {
        let mut nearest = f64::INFINITY;
        for pb in b {
            let d = pa.dist(*pb);
            if d < nearest {
                nearest = d;
                if nearest <= worst {
                    break;
                }
            }
        }
        worst = worst.max(nearest);
    }
    worst
}

/// Symmetric Hausdorff distance between the two point sets.
pub fn hausdorff(a: &[Point], b: &[Point]) -> Result<f64> {
    check_non_empty(a, b)?;
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

/// Discrete Fréchet distance (coupling distance).
pub fn frechet(a: &[Point], b: &[Point]) -> Result<f64> {
    check_non_empty(a, b)?;
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![0.0; m];
    for (i, pa) in a.iter().enumerate() {
        for j in 0..m {
            let c = pa.dist(b[j]);
            cur[j] = if i == 0 && j == 0 {
                c
            } else {
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if j > 0 { prev[j - 1] } else { f64::INFINITY };
                c.max(prev[j].min(left).min(diag))
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Heuristic measures, with their on-disk ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    Dtw,
    Edr { eps: f64 },
    Hausdorff,
    Frechet,
}

impl Measure {
    pub fn all(edr_eps: f64) -> [Measure; 4] {
        [
            Measure::Dtw,
            Measure::Edr { eps: edr_eps },
            Measure::Hausdorff,
            Measure::Frechet,
        ]
    }

    pub fn id(&self) -> u32 {
        match self {
            Measure::Dtw => 1,
            Measure::Edr { .. } => 2,
            Measure::Hausdorff => 3,
            Measure::Frechet => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Measure::Dtw => "dtw",
            Measure::Edr { .. } => "edr",
            Measure::Hausdorff => "hausdorff",
            Measure::Frechet => "frechet",
        }
    }

    pub fn distance(&self, a: &[Point], b: &[Point]) -> Result<f64> {
        match *self {
            Measure::Dtw => dtw(a, b),
            Measure::Edr { eps } => edr(a, b, eps).map(|d| d as f64),
            Measure::Hausdorff => hausdorff(a, b),
            Measure::Frechet => frechet(a, b),
        }
    }
}

/// Distances from one query to a list of candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrixRow {
    pub query_id: u64,
    pub distances: Vec<(u64, f64)>,
}

/// Full query-by-candidate distance table, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub measure_id: u32,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn compute(
        queries: &[&[Point]],
        candidates: &[&[Point]],
        measure: Measure,
        exec: Exec,
    ) -> Result<Self> {
        let rows: Vec<Result<Vec<f64>>> = exec.map(queries, |q| {
            candidates.iter().map(|c| measure.distance(q, c)).collect()
        });
        let mut values = Vec::with_capacity(queries.len() * candidates.len());
        for r in rows {
            values.extend(r?);
        }
        Ok(DistanceMatrix {
            measure_id: measure.id(),
            rows: queries.len(),
            cols: candidates.len(),
            values,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_with_ids(&self, i: usize, query_id: u64, candidate_ids: &[u64]) -> DistanceMatrixRow {
        DistanceMatrixRow {
            query_id,
            distances: candidate_ids.iter().copied().zip(self.row(i).iter().copied()).collect(),
        }
    }

    /// Writes the `OTDM` dump: 16-byte header then little-endian f32 values.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"OTDM")?;
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.cols as u32).to_le_bytes())?;
        w.write_all(&self.measure_id.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[0..4] != b"OTDM" {
            return Err(Error::Format("missing OTDM magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let (rows, cols, measure_id) = (word(4) as usize, word(8) as usize, word(12));
        let mut bytes = vec![0u8; rows * cols * 4];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(DistanceMatrix {
            measure_id,
            rows,
            cols,
            values,
        })
    }
}
