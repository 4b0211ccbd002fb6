//! Balanced order batching: partition N warehouse orders into K batches of
//! exactly c orders each, minimizing total picker travel distance.
//!
//! The crate provides the full stack: warehouse geometry and synthetic
//! instances (`warehouse`), TSP picker routing (`routing`), the
//! heterogeneous order/item graph (`obgraph`), typed-attention graph
//! networks and the route encoder (`nets`), differentiable balanced
//! clustering (`cluster`), label-generating heuristics (`heuristics`), and
//! the estimator-guided training loop (`train`).

pub mod cluster;
pub mod error;
pub mod heuristics;
pub mod nets;
pub mod obgraph;
pub mod routing;
pub mod train;
pub mod warehouse;

pub use error::{Error, Result};
