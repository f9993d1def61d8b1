//! cadar-core: the symbolic half of a neuro-symbolic pipeline for cognitive
//! attack detection in AR scenes. Video frames arrive as perception graphs
//! (objects with name/description/feature embeddings and scalar attributes,
//! plus relations); the engine tracks persistent object identities across
//! frames, flags four attack classes, and stabilizes its state with a
//! particle-filter resampling step:
//!
//! - text and visual modifications, by PCA-Gaussian Mahalanobis tests on a
//!   track's clean embedding history against chi-square thresholds;
//! - removals, when a high-importance track misses two consecutive frames;
//! - additions, when a fresh track spawns with low reasonability.
//!
//! The neural front end that would produce the graphs is abstracted behind a
//! deterministic embedding provider, and a synthetic benchmark generator
//! plus evaluation harness make the whole pipeline verifiable at desk scale.

pub mod bench;
pub mod detector;
pub mod embed;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod graph;
pub mod io;
pub mod matcher;
pub mod pipeline;

pub use error::{Error, Result};
pub use graph::{
    validate_frame, AttackType, EdgeRecord, EdgeSet, Embedding, GraphSet, Modality, NodeRecord,
    NodeSet, NodeSetId, PerceptionFrame,
};
pub use pipeline::{run_frames, FrameReport, Session, SessionConfig, TraceOptions, VideoVerdict};
