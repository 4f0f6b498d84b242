//! Synthetic road networks and ground-truth random-walk trajectories.
//!
//! The network is a jittered lattice; trajectories are non-backtracking
//! walks along its segments, densified and perturbed with bounded noise so
//! the traversed segment list is an exact road label.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::types::{BBox, Point, RoadSeq, Trajectory};
use crate::error::{param_err, Error, Result};

/// Lattice spacing in map units (about one kilometre in degrees).
pub const LATTICE_SPACING: f64 = 0.01;
/// Lower-left corner of generated lattices, lon/lat-like.
pub const LATTICE_ORIGIN: Point = Point::new(104.0, 30.6);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub id: u32,
    pub a: u32,
    pub b: u32,
}

/// Undirected road graph with dense node and segment ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    pub nodes: Vec<Point>,
    pub segments: Vec<Segment>,
    adjacency: Vec<Vec<(u32, u32)>>,
}

impl RoadNetwork {
    pub fn new(nodes: Vec<Point>, segments: Vec<Segment>) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (i, s) in segments.iter().enumerate() {
            if s.id as usize != i {
                return Err(Error::Data(format!(
                    "segment ids must be dense, found {} at position {i}",
                    s.id
                )));
            }
            if s.a == s.b {
                return Err(Error::Data(format!("segment {} is a self-loop", s.id)));
            }
            if s.a as usize >= nodes.len() || s.b as usize >= nodes.len() {
                return Err(Error::Data(format!(
                    "segment {} references a missing node",
                    s.id
                )));
            }
            adjacency[s.a as usize].push((s.b, s.id));
            adjacency[s.b as usize].push((s.a, s.id));
        }
        Ok(RoadNetwork {
            nodes,
            segments,
            adjacency,
        })
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn bbox(&self) -> BBox {
        BBox::of_points(&self.nodes).unwrap_or(BBox {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 0.0,
            max_y: 0.0,
        })
    }

    /// Neighbours of `node` as (node, segment) pairs.
    pub fn neighbours(&self, node: u32) -> &[(u32, u32)] {
        &self.adjacency[node as usize]
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0u32]);
        seen[0] = true;
        let mut count = 1;
        while let Some(n) = queue.pop_front() {
            for &(m, _) in self.neighbours(n) {
                if !seen[m as usize] {
                    seen[m as usize] = true;
                    count += 1;
                    queue.push_back(m);
                }
            }
        }
        count == self.nodes.len()
    }

    /// Endpoints of a segment in traversal order starting from `from`.
    pub fn segment_endpoints(&self, seg: u32) -> (Point, Point) {
        let s = self.segments[seg as usize];
        (self.nodes[s.a as usize], self.nodes[s.b as usize])
    }

    /// Polyline obtained by walking `road` through the network.
    ///
    /// The direction of the first segment is taken from the shared node
    /// with the second one.
    pub fn replay(&self, road: &RoadSeq) -> Result<Vec<Point>> {
        let ids = &road.segment_ids;
        let Some(&first) = ids.first() else {
            return Ok(Vec::new());
        };
        let seg = |id: u32| -> Result<Segment> {
            self.segments
                .get(id as usize)
                .copied()
                .ok_or(Error::Vocabulary {
                    id,
                    size: self.segments.len(),
                })
        };
        let s0 = seg(first)?;
        let mut current = match ids.get(1) {
            Some(&next) => {
                let s1 = seg(next)?;
                if s0.b == s1.a || s0.b == s1.b {
                    s0.a
                } else {
                    s0.b
                }
            }
            None => s0.a,
        };
        let mut out = vec![self.nodes[current as usize]];
        for &id in ids {
            let s = seg(id)?;
            let next = if s.a == current {
                s.b
            } else if s.b == current {
                s.a
            } else {
                return Err(Error::Data(format!(
                    "segment {id} does not continue the walk at node {current}"
                )));
            };
            out.push(self.nodes[next as usize]);
            current = next;
        }
        Ok(out)
    }
}

/// Builds a `rows x cols` lattice whose nodes are displaced by up to
/// `jitter` lattice spacings. Horizontal segments get the low ids.
pub fn generate_network(seed: u64, rows: usize, cols: usize, jitter: f64) -> Result<RoadNetwork> {
    if rows < 2 || cols < 2 {
        return param_err(format!("lattice needs at least 2x2 nodes, got {rows}x{cols}"));
    }
    if !(0.0..0.5).contains(&jitter) {
        return param_err(format!("jitter must lie in [0, 0.5), got {jitter}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (dx, dy) = if jitter > 0.0 {
                (
                    rng.gen_range(-jitter..jitter),
                    rng.gen_range(-jitter..jitter),
                )
            } else {
                (0.0, 0.0)
            };
            nodes.push(Point::new(
                LATTICE_ORIGIN.x + (c as f64 + dx) * LATTICE_SPACING,
                LATTICE_ORIGIN.y + (r as f64 + dy) * LATTICE_SPACING,
            ));
        }
    }
    let node = |r: usize, c: usize| (r * cols + c) as u32;
    let mut segments = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
    for r in 0..rows {
        for c in 0..cols - 1 {
            let id = segments.len() as u32;
            segments.push(Segment {
                id,
                a: node(r, c),
                b: node(r, c + 1),
            });
        }
    }
    for r in 0..rows - 1 {
        for c in 0..cols {
            let id = segments.len() as u32;
            segments.push(Segment {
                id,
                a: node(r, c),
                b: node(r + 1, c),
            });
        }
    }
    RoadNetwork::new(nodes, segments)
}

/// Knobs for [`generate_trajectories_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct WalkOptions {
    pub count: usize,
    pub seed: u64,
    pub min_hops: usize,
    pub max_hops: usize,
    /// Minimum number of points in every trajectory.
    pub min_points: usize,
    /// Per-coordinate noise bound, in lattice spacings.
    pub noise: f64,
    /// First trajectory id.
    pub first_id: u64,
}

impl WalkOptions {
    pub fn new(count: usize, seed: u64, min_hops: usize, max_hops: usize) -> Self {
        WalkOptions {
            count,
            seed,
            min_hops,
            max_hops,
            min_points: 24,
            noise: 0.01,
            first_id: 0,
        }
    }

    /// Largest distance between a generated point and its road polyline.
    pub fn noise_bound(&self) -> f64 {
        self.noise * LATTICE_SPACING * std::f64::consts::SQRT_2
    }
}

pub fn generate_trajectories(
    net: &RoadNetwork,
    count: usize,
    seed: u64,
    min_hops: usize,
    max_hops: usize,
) -> Result<Vec<(Trajectory, RoadSeq)>> {
    generate_trajectories_with(net, &WalkOptions::new(count, seed, min_hops, max_hops))
}

pub fn generate_trajectories_with(
    net: &RoadNetwork,
    opts: &WalkOptions,
) -> Result<Vec<(Trajectory, RoadSeq)>> {
    if opts.min_hops < 3 {
        return param_err("min_hops must be at least 3");
    }
    if opts.max_hops < opts.min_hops {
        return param_err("max_hops must be at least min_hops");
    }
    if opts.count == 0 {
        return param_err("count must be at least 1");
    }
    if !net.is_connected() {
        return Err(Error::Generation("road network is disconnected".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let bound = opts.noise * LATTICE_SPACING;
    let mut out = Vec::with_capacity(opts.count);
    for k in 0..opts.count {
        let id = opts.first_id + k as u64;
        let hops = rng.gen_range(opts.min_hops..=opts.max_hops);
        let start = rng.gen_range(0..net.nodes.len()) as u32;
        let mut node = start;
        let mut prev_seg: Option<u32> = None;
        let mut walk: Vec<(u32, u32, u32)> = Vec::with_capacity(hops);
        for _ in 0..hops {
            let options: Vec<(u32, u32)> = net
                .neighbours(node)
                .iter()
                .copied()
                .filter(|&(_, s)| Some(s) != prev_seg)
                .collect();
            let &(next, seg) = if options.is_empty() {
                &net.neighbours(node)[0]
            } else {
                &options[rng.gen_range(0..options.len())]
            };
            walk.push((node, next, seg));
            prev_seg = Some(seg);
            node = next;
        }
        let per_segment = opts.min_points.div_ceil(hops).max(3);
        let mut points = Vec::with_capacity(hops * per_segment + 1);
        let jiggle = |p: Point, rng: &mut ChaCha8Rng| {
            if bound > 0.0 {
                Point::new(
                    p.x + rng.gen_range(-bound..=bound),
                    p.y + rng.gen_range(-bound..=bound),
                )
            } else {
                p
            }
        };
        for &(a, b, _) in &walk {
            let (pa, pb) = (net.nodes[a as usize], net.nodes[b as usize]);
            for j in 0..per_segment {
                let t = j as f64 / per_segment as f64;
                let p = Point::new(pa.x + t * (pb.x - pa.x), pa.y + t * (pb.y - pa.y));
                points.push(jiggle(p, &mut rng));
            }
        }
        let end = net.nodes[node as usize];
        points.push(jiggle(end, &mut rng));
        let road = RoadSeq::collapsed(id, walk.iter().map(|w| w.2));
        out.push((Trajectory::new(id, points)?, road));
    }
    Ok(out)
}
