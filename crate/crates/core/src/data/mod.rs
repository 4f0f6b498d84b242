//! Trajectory types, synthetic data generation, preprocessing and view
//! extraction.

pub mod extract;
pub mod io;
pub mod network;
pub mod preprocess;
pub mod types;

pub use extract::{
    douglas_peucker, extract_regions, extract_topology, extract_topology_normalized,
    extract_views, topology_indices, TopologyParams,
};
pub use io::Dataset;
pub use network::{
    generate_network, generate_trajectories, generate_trajectories_with, RoadNetwork, Segment,
    WalkOptions,
};
pub use preprocess::{normalize, resample, resample_points, Frame, NaturalSpline};
pub use types::{
    BBox, GridSpec, Point, RegionSeq, RoadSeq, TopologySeq, Trajectory, TrajectoryRecord,
    DEFAULT_GRID,
};
