//! Dense f64 tensors, reverse-mode autodiff and transformer layers.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod rope;
pub mod tensor;

pub use checkpoint::{fingerprint_hex, fingerprint_of, Checkpoint, Fingerprint};
pub use gradcheck::{grad_check, GradCheck};
pub use graph::{Backprop, Graph, Var};
pub use layers::{FeedForward, LayerNorm, Linear, SelfAttention, TransformerBlock};
pub use optim::Adam;
pub use params::{ParamGrads, ParamId, ParamSet};
pub use rope::{rope_rotate, DEFAULT_ROPE_BASE};
pub use tensor::Tensor;
