//! Consensus-based multi-layer perceptrons over a peer-to-peer graph.
//!
//! Every node of a communication graph holds all training rows but only a
//! vertical slice of the features. Each node trains its own small MLP; in
//! each round a node picks a random neighbour, the two average their
//! prediction vectors, and both backpropagate the loss of that averaged
//! prediction. The only payloads that cross an edge are prediction vectors.
//!
//! Modules:
//!
//! - [`nn`]: dense MLP with forward pass, losses, backprop against an
//!   externally supplied output residual, and SGD.
//! - [`data`]: ingestion (CSV, svmlight), label binarization, scaling and
//!   vertical partitioning with overlap.
//! - [`gossip`]: topology, node state, the synchronous round scheduler and
//!   the stopping rule.
//! - [`metrics`]: ROC-AUC, Hanley-McNeil confidence intervals and the
//!   centralized-vs-distributed weight-norm diagnostic.
//! - [`experiment`]: configuration, the centralized baseline, trials,
//!   overlap sweeps and report serialization.

pub mod data;
pub mod error;
pub mod experiment;
pub mod gossip;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
pub use matrix::Matrix;
