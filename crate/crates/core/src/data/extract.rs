//! Derivation of the topology and region views of a trajectory.

use super::preprocess::normalize_points;
use super::types::{GridSpec, Point, RegionSeq, TopologySeq, Trajectory, TrajectoryRecord};
use crate::error::{param_err, Result};

/// Keypoint extraction thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologyParams {
    /// Douglas-Peucker tolerance, in per-trajectory normalized units.
    pub epsilon: f64,
    /// Minimum turning angle, radians.
    pub angle_min: f64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        TopologyParams {
            epsilon: 0.02,
            angle_min: 15f64.to_radians(),
        }
    }
}

pub(crate) fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * dx, a.y + t * dy))
}

/// Indices kept by Douglas-Peucker at tolerance `epsilon`, ascending.
pub fn douglas_peucker(points: &[Point], epsilon: f64) -> Vec<usize> {
    let n = points.len();
    if n <= 2 {
        return (0..n).collect();
    }
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0usize, n - 1)];
    while let Some((s, e)) = stack.pop() {
        if e <= s + 1 {
            continue;
        }
        let (mut best, mut best_d) = (s, -1.0);
        for i in s + 1..e {
            let d = point_segment_distance(points[i], points[s], points[e]);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        if best_d > epsilon {
            keep[best] = true;
            stack.push((s, best));
            stack.push((best, e));
        }
    }
    (0..n).filter(|&i| keep[i]).collect()
}

/// Turning angle at `b` between the headings `a -> b` and `b -> c`, radians.
pub fn turning_angle(a: Point, b: Point, c: Point) -> f64 {
    let (ux, uy) = (b.x - a.x, b.y - a.y);
    let (vx, vy) = (c.x - b.x, c.y - b.y);
    let nu = ux.hypot(uy);
    let nv = vx.hypot(vy);
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    ((ux * vx + uy * vy) / (nu * nv)).clamp(-1.0, 1.0).acos()
}

/// Keeps the interior Douglas-Peucker survivors whose turning angle, measured
/// against their surviving neighbours, reaches `angle_min`.
pub fn topology_indices(points: &[Point], epsilon: f64, angle_min: f64) -> Vec<usize> {
    let kept = douglas_peucker(points, epsilon);
    if kept.len() <= 2 {
        return kept;
    }
    let mut out = vec![kept[0]];
    for w in kept.windows(3) {
        if turning_angle(points[w[0]], points[w[1]], points[w[2]]) >= angle_min {
            out.push(w[1]);
        }
    }
    out.push(kept[kept.len() - 1]);
    out
}

/// Topology of `t` with thresholds in the trajectory's own units.
pub fn extract_topology(t: &Trajectory, epsilon: f64, angle_min: f64) -> Result<TopologySeq> {
    if epsilon < 0.0 {
        return param_err("epsilon must be non-negative");
    }
    let idx = topology_indices(&t.points, epsilon, angle_min);
    Ok(TopologySeq {
        trajectory_id: t.id,
        points: idx.into_iter().map(|i| t.points[i]).collect(),
    })
}

/// Topology with thresholds applied in the trajectory's normalized frame;
/// the returned points are the original (unnormalized) ones.
pub fn extract_topology_normalized(t: &Trajectory, params: &TopologyParams) -> Result<TopologySeq> {
    if params.epsilon < 0.0 {
        return param_err("epsilon must be non-negative");
    }
    let idx = match normalize_points(&t.points) {
        Ok(norm) => topology_indices(&norm, params.epsilon, params.angle_min),
        // A stationary trajectory has no keypoints beyond its ends.
        Err(_) => vec![0, t.points.len() - 1],
    };
    Ok(TopologySeq {
        trajectory_id: t.id,
        points: idx.into_iter().map(|i| t.points[i]).collect(),
    })
}

/// Grid cells hit by the trajectory's points, in first-visit order.
pub fn extract_regions(t: &Trajectory, grid: &GridSpec) -> Result<RegionSeq> {
    if t.points.is_empty() {
        return param_err("cannot extract regions of an empty trajectory");
    }
    let mut seen = vec![false; grid.cell_count()];
    let mut region_ids = Vec::new();
    for p in &t.points {
        let c = grid.cell_of(*p);
        if !seen[c as usize] {
            seen[c as usize] = true;
            region_ids.push(c);
        }
    }
    Ok(RegionSeq {
        trajectory_id: t.id,
        region_ids,
    })
}

/// Fills in the topology and region views of a record.
pub fn extract_views(
    record: &mut TrajectoryRecord,
    grid: &GridSpec,
    params: &TopologyParams,
) -> Result<()> {
    record.topology = Some(extract_topology_normalized(&record.trajectory, params)?);
    record.region = Some(extract_regions(&record.trajectory, grid)?);
    Ok(())
}
