//! Corpus-to-benchmark toolkit.
//!
//! The pipeline turns raw text into a hub-pruned knowledge graph, mines
//! two-hop reasoning chains from it, synthesizes masked multiple-choice items
//! with sibling-branch hard negatives, and scores answer-producing models with
//! shortcut diagnostics (hard-negative error rate and reasoning recovery rate).
//!
//! Modules map one-to-one onto pipeline stages:
//!
//! * [`providers`]: chat / embedding / rerank clients, deterministic mocks, response cache
//! * [`corpus`]: OCR cleanup, sentence splitting, percentile-threshold semantic chunking
//! * [`hierarchy`]: projection, Gaussian mixture EM, BIC model selection, summary tree
//! * [`kg`]: triplet extraction, entity alignment, hub shattering, topology analytics
//! * [`synthesis`]: chain mining, hard negatives, vignette synthesis, dataset statistics
//! * [`eval`]: multiple-choice evaluation, RAG contexts, HNE and R³
//! * [`pipeline`]: configuration, run manifests, JSONL snapshots, stage orchestration

pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod hierarchy;
pub mod jsonl;
pub mod kg;
pub mod pipeline;
pub mod providers;
pub mod seed;
pub mod synthesis;
pub mod text;

pub use error::{Error, Result};
pub use exec::Execution;
