//! Expert-matching engine for support incidents.
//!
//! The pipeline ingests incident, engineer, KBA, swarm and component records,
//! builds a heterogeneous knowledge graph, trains importance-pooling graph
//! convolution embeddings with a max-margin triplet loss, and ranks every
//! engineer for an incoming incident. Non-graph baselines and a synthetic
//! corpus generator back a top-k hit-ratio benchmark.

pub mod error;
pub mod par;
pub mod util;

pub mod baselines;
pub mod config;
pub mod evalbench;
pub mod featurize;
pub mod gnn;
pub mod ingest;
pub mod kgraph;
pub mod pipeline;
pub mod rank;
pub mod synthgen;
pub mod train;

pub use error::{Error, Result};
