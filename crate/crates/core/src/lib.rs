//! Seeded simulation of predictive auto-scaling under provisioning delays.

pub mod cost;
pub mod engine;
pub mod error;
pub mod forecaster;
pub mod optimizer;
pub mod policies;
pub mod provider;
pub mod rng;
pub mod series;
pub mod workload;

pub use error::{Error, Result};
