//! Core library for simulating and learning rebalancing policies in
//! station-free vehicle sharing systems.
//!
//! The crate models a city as a set of areas grouped into demand categories,
//! simulates vehicle pickups and returns as censored birth-death processes,
//! trains per-category tabular Q-learning agents on a fairness-weighted
//! reward, and aggregates service-quality and cost metrics across parameter
//! sweeps.

pub mod city;
pub mod learn;
pub mod metrics;
pub mod reward;
pub mod sim;
pub mod stochastic;
pub mod sweep;
