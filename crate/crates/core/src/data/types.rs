use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

/// A planar point in abstract map units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point { x, y }
    }
}

/// Flattens points into `[x0, y0, x1, y1, ...]`.
pub fn flatten_points(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

/// Inverse of [`flatten_points`].
pub fn unflatten_points(flat: &[f64]) -> Result<Vec<Point>> {
    if flat.len() % 2 != 0 {
        return Err(Error::Data(format!(
            "flat point array has odd length {}",
            flat.len()
        )));
    }
    Ok(flat.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())
}

/// Ordered point sequence of one moving object.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub points: Vec<Point>,
}

impl Trajectory {
    pub fn new(id: u64, points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return param_err(format!(
                "trajectory {id} has {} points, need at least 2",
                points.len()
            ));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::Data(format!(
                "trajectory {id} has a non-finite point ({}, {})",
                p.x, p.y
            )));
        }
        Ok(Trajectory { id, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Keypoints of a trajectory: a subsequence that keeps both endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySeq {
    pub trajectory_id: u64,
    pub points: Vec<Point>,
}

/// Road segments traversed, with consecutive repeats collapsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoadSeq {
    pub trajectory_id: u64,
    pub segment_ids: Vec<u32>,
}

impl RoadSeq {
    /// Builds a sequence, collapsing consecutive duplicates.
    pub fn collapsed(trajectory_id: u64, ids: impl IntoIterator<Item = u32>) -> Self {
        let mut segment_ids: Vec<u32> = Vec::new();
        for id in ids {
            if segment_ids.last() != Some(&id) {
                segment_ids.push(id);
            }
        }
        RoadSeq {
            trajectory_id,
            segment_ids,
        }
    }
}

/// Grid cells visited, in first-visit order without repeats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSeq {
    pub trajectory_id: u64,
    pub region_ids: Vec<u32>,
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<BBox> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BBox {
            min_x: first.x,
            min_y: first.y,
            max_x: first.x,
            max_y: first.y,
        };
        for p in it {
            b.min_x = b.min_x.min(p.x);
            b.min_y = b.min_y.min(p.y);
            b.max_x = b.max_x.max(p.x);
            b.max_y = b.max_y.max(p.y);
        }
        Some(b)
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    /// Grows every side by `frac` of the larger extent.
    pub fn expanded(&self, frac: f64) -> BBox {
        let m = self.width().max(self.height()) * frac;
        BBox {
            min_x: self.min_x - m,
            min_y: self.min_y - m,
            max_x: self.max_x + m,
            max_y: self.max_y + m,
        }
    }
}

/// Uniform grid over a bounding box; cell id = `row * cols + col`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BBox,
    pub rows: u32,
    pub cols: u32,
}

pub const DEFAULT_GRID: u32 = 16;

impl GridSpec {
    pub fn new(bbox: BBox, rows: u32, cols: u32) -> Result<Self> {
        if !(bbox.max_x > bbox.min_x && bbox.max_y > bbox.min_y) {
            return param_err("grid bounding box must have positive width and height");
        }
        if rows == 0 || cols == 0 {
            return param_err("grid needs at least one row and one column");
        }
        Ok(GridSpec { bbox, rows, cols })
    }

    pub fn cell_count(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    /// Cell containing `p`. Points outside the box are clamped onto it and
    /// points on an interior boundary go to the lower-index cell.
    pub fn cell_of(&self, p: Point) -> u32 {
        let col = Self::axis_index(p.x, self.bbox.min_x, self.bbox.max_x, self.cols);
        let row = Self::axis_index(p.y, self.bbox.min_y, self.bbox.max_y, self.rows);
        row * self.cols + col
    }

    fn axis_index(v: f64, lo: f64, hi: f64, n: u32) -> u32 {
        let f = (v - lo) / (hi - lo) * n as f64;
        let idx = f.ceil() - 1.0;
        idx.clamp(0.0, (n - 1) as f64) as u32
    }

    /// Bounds of a cell as (min_x, min_y, max_x, max_y).
    pub fn cell_bounds(&self, id: u32) -> BBox {
        let (row, col) = (id / self.cols, id % self.cols);
        let w = self.bbox.width() / self.cols as f64;
        let h = self.bbox.height() / self.rows as f64;
        BBox {
            min_x: self.bbox.min_x + col as f64 * w,
            min_y: self.bbox.min_y + row as f64 * h,
            max_x: self.bbox.min_x + (col + 1) as f64 * w,
            max_y: self.bbox.min_y + (row + 1) as f64 * h,
        }
    }
}

/// A trajectory together with whichever derived views are available.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub trajectory: Trajectory,
    pub topology: Option<TopologySeq>,
    pub road: Option<RoadSeq>,
    pub region: Option<RegionSeq>,
}

impl TrajectoryRecord {
    pub fn new(trajectory: Trajectory) -> Self {
        TrajectoryRecord {
            trajectory,
            topology: None,
            road: None,
            region: None,
        }
    }

    pub fn id(&self) -> u64 {
        self.trajectory.id
    }
}
