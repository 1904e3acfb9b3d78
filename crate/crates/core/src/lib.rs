//! Identification and receding-horizon control of diversion messages on
//! airport landside roadways.
//!
//! The pipeline fits a linear model of departures/arrivals flow and speed,
//! solves a binary finite-horizon control problem over sign messages, and
//! evaluates counterfactual relief on historical congestion windows.

pub mod config;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod mpc;
pub mod plant;
pub mod stats;
pub mod synth;
pub mod sysid;
pub mod types;

pub use error::{Error, Result};
pub use types::*;

/// Version stamped into every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;
