//! Modality encoders, projection heads and fusion.

pub mod config;
pub mod embed;
pub mod model;

pub use config::{
    fusion_subsets, supported_subsets, EncoderConfig, Modality, ModalitySet, Pooling, ENCODER_KEYS,
};
pub use embed::{Encoders, ModalityEmbedding, QueryInputs};
pub use model::{patchify, EncoderInput, Fusion, Model, ProjectionHead, SequenceEncoder};
