//! Taxonomy expansion with hyperbolic graph neural networks.
//!
//! Anchor concepts of a seed taxonomy are encoded by a hyperbolic GNN over
//! their ego graphs, new query concepts are lifted from word-embedding
//! features, and a hyperbolic matching head scores every anchor as a
//! candidate parent.

pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod features;
pub mod fsio;
pub mod hgnn;
pub mod manifold;
pub mod matching;
pub mod network;
pub mod pipeline;
pub mod synthetic;
pub mod taxonomy;
pub mod train;

pub use error::{Error, Result};
