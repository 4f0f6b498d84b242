//! Coordinate normalization and fixed-length resampling.

use serde::{Deserialize, Serialize};

use super::types::{BBox, Point, Trajectory};
use crate::error::{param_err, Error, Result};

/// Centers a trajectory on its centroid and divides by its largest absolute
/// coordinate, so every output lies in `[-1, 1]` with the aspect ratio kept.
pub fn normalize(t: &Trajectory) -> Result<Trajectory> {
    Ok(Trajectory {
        id: t.id,
        points: normalize_points(&t.points)?,
    })
}

pub fn normalize_points(points: &[Point]) -> Result<Vec<Point>> {
    if points.len() < 2 {
        return param_err("normalize needs at least two points");
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let centered: Vec<Point> = points.iter().map(|p| Point::new(p.x - cx, p.y - cy)).collect();
    let scale = centered
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Degenerate("all points are identical".into()));
    }
    Ok(centered
        .into_iter()
        .map(|p| Point::new(p.x / scale, p.y / scale))
        .collect())
}

/// Shared reference frame mapping a dataset's bounding box into `[-1, 1]`
/// with a single scale, so that absolute location survives normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub cx: f64,
    pub cy: f64,
    pub half_extent: f64,
}

impl Frame {
    pub fn from_bbox(b: &BBox) -> Result<Self> {
        let half_extent = b.width().max(b.height()) / 2.0;
        if !(half_extent > 0.0) {
            return Err(Error::Degenerate("frame bounding box has zero extent".into()));
        }
        Ok(Frame {
            cx: (b.min_x + b.max_x) / 2.0,
            cy: (b.min_y + b.max_y) / 2.0,
            half_extent,
        })
    }

    pub fn to_local(&self, p: Point) -> Point {
        Point::new(
            (p.x - self.cx) / self.half_extent,
            (p.y - self.cy) / self.half_extent,
        )
    }

    pub fn to_map(&self, p: Point) -> Point {
        Point::new(
            p.x * self.half_extent + self.cx,
            p.y * self.half_extent + self.cy,
        )
    }
}

/// Natural cubic spline through `(t_i, y_i)`, `t` strictly increasing.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(t: &[f64], y: &[f64]) -> Result<Self> {
        let n = t.len();
        if n != y.len() || n < 2 {
            return param_err("spline needs matching knot and value arrays of length >= 2");
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return param_err("spline knots must be strictly increasing");
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second-derivative system.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = t[i] - t[i - 1];
                let h1 = t[i + 1] - t[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 1..k {
                let lower = t[i + 1] - t[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(NaturalSpline {
            t: t.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.t.len();
        let i = match self.t.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let (a, b) = (t1 - x, x - t0);
        self.m[i] * a * a * a / (6.0 * h)
            + self.m[i + 1] * b * b * b / (6.0 * h)
            + (self.y[i] / h - self.m[i] * h / 6.0) * a
            + (self.y[i + 1] / h - self.m[i + 1] * h / 6.0) * b
    }
}

/// A planar curve parameterized over `[0, 1]`.
enum Curve {
    Linear { knots: Vec<f64>, points: Vec<Point> },
    Spline { x: NaturalSpline, y: NaturalSpline },
}

impl Curve {
    fn eval(&self, u: f64) -> Point {
        match self {
            Curve::Spline { x, y } => Point::new(x.eval(u), y.eval(u)),
            Curve::Linear { knots, points } => {
                let n = knots.len();
                let i = knots.partition_point(|&k| k <= u).clamp(1, n - 1) - 1;
                let h = knots[i + 1] - knots[i];
                let s = ((u - knots[i]) / h).clamp(0.0, 1.0);
                let (a, b) = (points[i], points[i + 1]);
                Point::new(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y))
            }
        }
    }
}

/// Normalized cumulative chord length of a polyline.
pub fn chord_parameters(points: &[Point]) -> Vec<f64> {
    let mut acc = Vec::with_capacity(points.len());
    let mut s = 0.0;
    acc.push(0.0);
    for w in points.windows(2) {
        s += w[0].dist(w[1]);
        acc.push(s);
    }
    if s > 0.0 {
        for a in acc.iter_mut() {
            *a /= s;
        }
        if let Some(last) = acc.last_mut() {
            *last = 1.0;
        }
    }
    acc
}

fn dedup_consecutive(points: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}


/// Resampled points together with the curve parameters they were taken at.
#[derive(Debug, Clone)]
pub struct Resampled {
    pub points: Vec<Point>,
    pub params: Vec<f64>,
    /// True when a cubic spline (rather than the polyline) was used.
    pub spline: bool,
}

/// Resamples to exactly `len` points.
///
/// The curve is a natural cubic spline against normalized chord length
/// (piecewise linear below four distinct points). Samples are spread evenly
/// over the input's point index, so a trajectory that already has `len`
/// points resamples to itself. Endpoints are kept exactly.
pub fn resample(t: &Trajectory, len: usize) -> Result<Trajectory> {
    Ok(Trajectory {
        id: t.id,
        points: resample_points(&t.points, len)?.points,
    })
}

pub fn resample_points(points: &[Point], len: usize) -> Result<Resampled> {
    if points.len() < 2 {
        return param_err("resample needs at least two points");
    }
    if len < 2 {
        return param_err("resample length must be at least 2");
    }
    let knots_pts = dedup_consecutive(points);
    let first = points[0];
    let last = points[points.len() - 1];
    if knots_pts.len() < 2 {
        return Ok(Resampled {
            points: vec![first; len],
            params: (0..len).map(|j| j as f64 / (len - 1) as f64).collect(),
            spline: false,
        });
    }
    let knots = chord_parameters(&knots_pts);
    let params = sample_params(&knots, len);
    let spline = knots_pts.len() >= 4;
    let curve = if spline {
        let xs: Vec<f64> = knots_pts.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = knots_pts.iter().map(|p| p.y).collect();
        Curve::Spline {
            x: NaturalSpline::new(&knots, &xs)?,
            y: NaturalSpline::new(&knots, &ys)?,
        }
    } else {
        Curve::Linear {
            knots,
            points: knots_pts,
        }
    };
    let mut out: Vec<Point> = params.iter().map(|&u| curve.eval(u)).collect();
    out[0] = first;
    out[len - 1] = last;
    Ok(Resampled {
        points: out,
        params,
        spline,
    })
}

/// Parameters for `len` samples: sample `j` sits at fractional knot index
/// `j * (k - 1) / (len - 1)`, interpolated linearly between the knot
/// parameters. With `len == k` the samples are the knots themselves.
fn sample_params(knots: &[f64], len: usize) -> Vec<f64> {
    let k = knots.len();
    (0..len)
        .map(|j| {
            let num = j * (k - 1);
            let (i, rem) = (num / (len - 1), num % (len - 1));
            if rem == 0 {
                knots[i]
            } else {
                let f = rem as f64 / (len - 1) as f64;
                knots[i] + f * (knots[i + 1] - knots[i])
            }
        })
        .collect()
}
