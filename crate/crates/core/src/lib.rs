//! Discriminative causal structure learning at desk scale.
//!
//! The pipeline: simulate gold-standard SEM benchmark data ([`sem`]), split
//! variable pairs into prior knowledge and novel test pairs ([`graph`]),
//! featurize ordered pairs as asymmetric KDE images ([`kde`]) and labeled
//! enclosing subgraphs ([`subgraph`]), train the dual-tower classifier
//! ([`model`]) and score the inferred graph against ground truth ([`eval`]).

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kde;
pub mod model;
pub mod rng;
pub mod sem;
pub mod subgraph;

pub use error::CoreError;
