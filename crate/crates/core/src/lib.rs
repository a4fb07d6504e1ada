//! Configuration-driven, staged retrieval-augmented generation.
//!
//! A query flows through six stages: refinement, decomposition into
//! sub-queries, parallel retrieval from a local vector store and the web,
//! domain-agent enhancement, synthesis by a small generation model, and
//! deterministic citation insertion by sentence-level embedding similarity.
//!
//! Alongside the query engine the crate ships the agentic corpus builder
//! (deduplicating, crash-safe JSONL collection) and the evaluation harness
//! (composite scoring, significance tests, effect sizes, agreement).
//!
//! Every tunable lives in [`config::PipelineConfig`]; every provider
//! (generation, embedding, search, fetch) sits behind a trait with a
//! deterministic mock so the whole engine runs hermetically.

pub mod agents;
pub mod citation;
pub mod clock;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod eval;
pub mod gateway;
pub mod pipeline;
pub mod stage;
pub mod store;
pub mod web;

pub(crate) mod text;

pub use config::{load_config, ConfigError, PipelineConfig};
pub use stage::{Endpoint, Stage};
