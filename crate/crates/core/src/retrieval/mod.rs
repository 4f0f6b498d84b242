//! Embedding stores and exact retrieval.

mod condition;
mod search;
mod store;

pub use condition::{condition_query, CoarseStage, QuerySpec, StoreSet};
pub use search::{rank_of, topk, topk_batch, two_stage, Hit, Provenance, RetrievalResult, Stage, QUERY_NORM_TOL};
pub use store::{build_store, EmbeddingStore, NORM_TOL};
