//! Desk-scale laboratory for structural-entropy-guided attacks on a
//! bipartite-graph news classifier, and for hardening the classifier against
//! them.
//!
//! The pipeline: build a weighted user-post engagement graph, minimize its
//! structural entropy to find a hierarchical community tree, score account
//! influence from the tree, partition controlled accounts into bot / cyborg /
//! worker tiers, run a cooperative multi-agent Q-learning attack inside each
//! target's community subgraph against a black-box detector, then retrain the
//! detector on the attack-enriched graph and measure how much of the damage
//! is recovered.

pub mod attack;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod influence;
pub mod rng;
pub mod tree;

pub use error::{Result, SealError};
