//! Engine for knowledge-graph question answering built around an
//! attention-guided subgraph retriever that grows and prunes a candidate
//! subgraph, a pooled soft token that injects graph structure into an answer
//! scorer, and a training loop that couples the two through score feedback.
//!
//! Modules:
//! - [`numerics`]: tensors, reverse-mode tape, Adam, grad checking, checkpoints
//! - [`kg`]: triple store with interned vocabularies and adjacency
//! - [`embed`]: deterministic hash-seeded or file-backed embeddings
//! - [`retriever`]: attention scoring, frontier growth, pruning, mask sampling
//! - [`bridge`]: attention pooling to a soft token plus prompt verbalisation
//! - [`reasoner`]: pluggable answer scorer contract and a toy implementation
//! - [`training`]: path supervision, joint losses, the fit loop
//! - [`cam`]: question complexity classifier that sets retrieval budgets
//! - [`engine`]: one struct wiring graph, embeddings, and all parameter groups
//! - [`evalbench`]: metrics, synthetic corpus generation, latency harness
//! - [`config`]: run configuration shared by the CLI and tests

pub mod bridge;
pub mod cam;
pub mod config;
pub mod embed;
pub mod engine;
pub mod error;
pub mod evalbench;
pub mod kg;
pub mod numerics;
pub mod reasoner;
pub mod retriever;
pub mod training;

pub use error::{CoreError, Result};
