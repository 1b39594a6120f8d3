//! Progressive video condensation for long-form video question answering.
//!
//! A video is narrowed in three steps before a multimodal model answers a
//! multiple-choice question over it: a coarse segment is localized from the
//! segment starting frames, the segment is split into snippets by sequential
//! caption-similarity clustering, and low-confidence snippets are refined down
//! to single keyframes. The final chronologically sorted keyframe set (images
//! plus captions) is what the answering call sees.
//!
//! Module map:
//! - [`model`]: shared domain types, chronological merging, budget accounting
//! - [`trace`]: per-run trace records and the frame-budget ledger
//! - [`sampler`]: frame extraction from video files and synthetic test videos
//! - [`index`]: captioning / embedding clients, cosine kernel, response cache use
//! - [`condenser`]: segment partition, dynamic threshold, sequential clustering
//! - [`gateway`]: prompt construction, structured-output parsing, model backends
//! - [`pipeline`]: the end-to-end run with fallbacks and ablation switches
//! - [`harness`]: task loading, batch execution, reports, synthetic suites

pub mod cache;
pub mod condenser;
pub mod digest;
pub mod gateway;
pub mod harness;
pub mod index;
pub mod model;
pub mod net;
pub mod pipeline;
pub mod sampler;
pub mod trace;

pub(crate) mod util;
