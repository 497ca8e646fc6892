//! Curation and evaluation engine for contrastive code retrieval.
//!
//! Stages, in pipeline order:
//! [`corpus`] ingests and prefilters (text, code) pairs, [`embedder`] turns
//! both sides into unit vectors, [`simgraph`] keeps each text's exact top-K′
//! code neighbors, [`curation`] applies dual consistency filtering and builds
//! false-negative-filtered hard-negative pools, [`sampler`] emits curriculum
//! training batches, and [`contrastive`] checks the InfoNCE objective on a
//! toy bi-encoder. [`ranker`], [`rerank`] and [`localize`] cover retrieval,
//! listwise reranking and function localization evaluation.

pub mod backend;
pub mod cli;
pub mod contrastive;
pub mod corpus;
pub mod curation;
pub mod embedder;
pub mod error;
pub mod hashing;
pub mod jsonl;
pub mod localize;
pub mod protocol;
pub mod ranker;
pub mod rerank;
pub mod sampler;
pub mod simgraph;
pub mod synth;
pub mod toy;

pub use error::{Error, Result};
