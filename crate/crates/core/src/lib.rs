//! Forwarded-message network analysis for Telegram exports.
//!
//! The crate rebuilds the directed network in which an edge `a -> b` means
//! chat `b` posted content forwarded from `a`, measures it, and labels
//! broadcast channels with one of five key-user roles.
//!
//! Typical flow: [`ingest::parse_export`] → [`ingest::anonymize`] →
//! [`ingest::filter_forwarded`] → [`ForwardGraph::build`] →
//! [`metrics::metrics_table`] → [`community::louvain`] →
//! [`classify::classify`] → [`layout::yifan_hu`] → [`export`].
//! [`pipeline::run_pipeline`] wires all of it together.

pub mod classify;
pub mod community;
pub mod error;
pub mod export;
pub mod ingest;
pub mod layout;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    degrees, filter_min_frequency, Edge, Entity, EntityKind, ForwardGraph, ForwardRecord, KindRegistry, NodeMetrics,
};
