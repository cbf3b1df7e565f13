//! Simulation of spatio-temporal graph convolutional traffic forecasting
//! trained over geographically placed cloudlets, under centralized,
//! federated (with aggregator), server-free federated and gossip regimes,
//! with exact communication and compute accounting.

pub mod accounting;
pub mod config;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod output;
pub mod partition;
pub mod protocols;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
