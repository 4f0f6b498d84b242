//! Multimodal trajectory retrieval.
//!
//! Trajectories are viewed through four modalities (raw points, topology
//! keypoints, road segments, grid regions). One transformer encoder per
//! modality maps its view into a shared unit-sphere embedding space, trained
//! with a bidirectional InfoNCE objective against the trajectory encoder.
//! Retrieval is an exact cosine scan over precomputed embedding stores.

pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod measures;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod retrieval;
pub mod training;

pub use error::{Error, Result};
pub use par::Exec;
