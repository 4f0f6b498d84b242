//! Line-delimited JSON interchange for datasets and road networks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::extract::{extract_views, TopologyParams};
use super::network::{RoadNetwork, Segment};
use super::types::{
    flatten_points, unflatten_points, GridSpec, Point, RegionSeq, RoadSeq, TopologySeq,
    Trajectory, TrajectoryRecord,
};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    id: u64,
    points: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    road: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    topology: Option<Vec<f64>>,
}

impl From<&TrajectoryRecord> for RecordLine {
    fn from(r: &TrajectoryRecord) -> Self {
        RecordLine {
            id: r.id(),
            points: flatten_points(&r.trajectory.points),
            road: r.road.as_ref().map(|s| s.segment_ids.clone()),
            region: r.region.as_ref().map(|s| s.region_ids.clone()),
            topology: r.topology.as_ref().map(|s| flatten_points(&s.points)),
        }
    }
}

impl TryFrom<RecordLine> for TrajectoryRecord {
    type Error = Error;

    fn try_from(l: RecordLine) -> Result<Self> {
        let id = l.id;
        Ok(TrajectoryRecord {
            trajectory: Trajectory::new(id, unflatten_points(&l.points)?)?,
            road: l.road.map(|segment_ids| RoadSeq {
                trajectory_id: id,
                segment_ids,
            }),
            region: l.region.map(|region_ids| RegionSeq {
                trajectory_id: id,
                region_ids,
            }),
            topology: l
                .topology
                .map(|flat| {
                    unflatten_points(&flat).map(|points| TopologySeq {
                        trajectory_id: id,
                        points,
                    })
                })
                .transpose()?,
        })
    }
}

/// An ordered collection of trajectory records with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<TrajectoryRecord>,
}

impl Dataset {
    pub fn new(records: Vec<TrajectoryRecord>) -> Result<Self> {
        let mut ids: Vec<u64> = records.iter().map(|r| r.id()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("duplicate trajectory id {}", w[0])));
        }
        Ok(Dataset { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&TrajectoryRecord> {
        self.records.iter().find(|r| r.id() == id)
    }

    /// Drops trajectories shorter than `min_points`.
    pub fn filter_short(self, min_points: usize) -> Self {
        Dataset {
            records: self
                .records
                .into_iter()
                .filter(|r| r.trajectory.len() >= min_points)
                .collect(),
        }
    }

    /// Extracts topology and region views for every record.
    pub fn extract(&mut self, grid: &GridSpec, params: &TopologyParams) -> Result<()> {
        for r in &mut self.records {
            extract_views(r, grid, params)?;
        }
        Ok(())
    }

    /// Splits into the first `n` records and the rest.
    pub fn split_at(self, n: usize) -> (Dataset, Dataset) {
        let mut head = self.records;
        let tail = head.split_off(n.min(head.len()));
        (Dataset { records: head }, Dataset { records: tail })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(&RecordLine::from(r))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: RecordLine = serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("dataset line {}: {e}", no + 1)))?;
            records.push(TrajectoryRecord::try_from(l)?);
        }
        Dataset::new(records)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, &RecordLine::from(r))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut records = Vec::new();
        for (no, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: RecordLine = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("dataset line {}: {e}", no + 1)))?;
            records.push(TrajectoryRecord::try_from(l)?);
        }
        Dataset::new(records)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum NetworkLine {
    Node { id: u32, x: f64, y: f64 },
    Segment { id: u32, a: u32, b: u32 },
}

impl RoadNetwork {
    /// Default region grid: the node bounding box, padded by 2%.
    pub fn grid(&self, cells: u32) -> Result<GridSpec> {
        GridSpec::new(self.bbox().expanded(0.02), cells, cells)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for (i, p) in self.nodes.iter().enumerate() {
            let l = NetworkLine::Node {
                id: i as u32,
                x: p.x,
                y: p.y,
            };
            out.push_str(&serde_json::to_string(&l)?);
            out.push('\n');
        }
        for s in &self.segments {
            let l = NetworkLine::Segment {
                id: s.id,
                a: s.a,
                b: s.b,
            };
            out.push_str(&serde_json::to_string(&l)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut nodes: Vec<(u32, Point)> = Vec::new();
        let mut segments = Vec::new();
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: NetworkLine = serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("network line {}: {e}", no + 1)))?;
            match l {
                NetworkLine::Node { id, x, y } => nodes.push((id, Point::new(x, y))),
                NetworkLine::Segment { id, a, b } => segments.push(Segment { id, a, b }),
            }
        }
        nodes.sort_by_key(|n| n.0);
        if nodes.iter().enumerate().any(|(i, n)| n.0 as usize != i) {
            return Err(Error::Format("node ids must be dense from 0".into()));
        }
        segments.sort_by_key(|s| s.id);
        RoadNetwork::new(nodes.into_iter().map(|n| n.1).collect(), segments)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}
