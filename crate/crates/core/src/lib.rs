//! Allocation-only kernels for closed-loop CAD program synthesis.
//!
//! Everything in this crate is a pure function over in-memory data: the
//! acceptance gates applied to executor reports, mesh-level geometric
//! rechecks, TF-IDF retrieval, catalog deduplication, shape metrics,
//! embedding curation and generation statistics. IO, networking and
//! process management live in the `cadsynth` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod curate;
pub mod gates;
pub mod math;
pub mod mesh;
pub mod metrics;
pub mod shapes;
pub mod stats;
pub mod text;
pub mod tfidf;

pub use gates::{evaluate_report, GateReason, GeometryGates, MeshEvidence, ValidationReport, Verdict};
pub use mesh::TriMesh;
