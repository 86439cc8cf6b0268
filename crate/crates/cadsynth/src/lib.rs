//! Closed-loop CAD program synthesis: model client, tools, repair loop,
//! artifact store, pipeline coordinator and file formats.
//!
//! Numeric kernels (gates, mesh checks, metrics, clustering, statistics)
//! live in `cadsynth-core`.

pub mod catalog;
pub mod coordinator;
pub mod docs;
pub mod embeddings;
pub mod eval;
pub mod executor;
pub mod llm;
pub mod prompts;
pub mod rollout;
pub mod stl;
pub mod store;
pub mod tools;

pub use cadsynth_core as core;
