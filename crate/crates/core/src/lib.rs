//! Discrete-time simulator for gossip and federated neural-network training.
//!
//! The crate is split along the lines of the experiment pipeline:
//!
//! * [`nn`] - dense feedforward networks, Xavier initialization and momentum SGD
//! * [`averaging`] - model aggregation, including variance-corrected averaging
//! * [`topology`] - communication graphs and temporal peer activation
//! * [`data`] - MNIST IDX loading, Dirichlet label skew and batch sampling
//! * [`simulator`] - the tick-driven gossip and federated engines
//! * [`metrics`] - accuracy, weight-difference, variance and plateau analysis

pub mod averaging;
pub mod data;
mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod simulator;
pub mod topology;

pub use error::{Error, Result};
