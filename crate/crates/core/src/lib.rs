//! Curation toolkit for image-text datasets.
//!
//! Captions are masked (bracketed asides and digit-bearing tokens removed),
//! re-scored against image embeddings by cosine similarity, and the top α
//! fraction of the pool is kept. Baseline filters, composite filters and
//! diagnostics live alongside.

pub mod datamodel;
pub mod embedding;
pub mod filters;
pub mod masker;
pub mod scoring;
pub mod stats;

pub use datamodel::{
    read_shard, write_shard, DataError, EmbeddingMatrix, ReadOptions, Sample, Shard,
};
pub use embedding::{
    EmbedError, EmbeddingProvider, PrecomputedProvider, Providers, RemoteConfig, RemoteProvider,
    TextVector, ToyProvider,
};
pub use filters::{FilterError, FilterResult, FilterSpec};
pub use masker::{mask, MaskRules};
pub use scoring::{score_shard, Channel, ScoreError, ScoreTable, SENTINEL};

/// Version of the embedding sidecar format this crate reads and writes.
pub const SIDECAR_FORMAT_VERSION: u16 = datamodel::SIDECAR_VERSION;
