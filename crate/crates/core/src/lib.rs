//! Federated reinforcement learning with gradient gossip between agents,
//! periodic averaging, stragglers, link delays and exact cost accounting.

pub mod bound;
pub mod cli;
pub mod config;
pub mod consensus;
pub mod cost;
pub mod error;
pub mod estimate;
pub mod fed;
pub mod linalg;
pub mod params;
pub mod problems;
pub mod report;
pub mod rng;
pub mod runner;
pub mod topology;

pub use error::{FirlError, Result};
