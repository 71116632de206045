//! Desk-scale active learning laboratory: consistency-based acquisition
//! scores over Monte Carlo output matrices, selective oracle questioning
//! with a learned selector head, simulated clean and noisy oracles, and a
//! deterministic experiment harness.

pub mod acceptance;
pub mod acquisition;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod mc;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod selective;

pub use error::{Error, Result};
