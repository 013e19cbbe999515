//! Simulation and Lyapunov-based stability checks for stochastic
//! differential equations driven by G-Brownian motion under volatility
//! uncertainty.

// `!(a < b)` is used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod casebook;
pub mod diagnostics;
pub mod engine;
mod error;
pub mod gfunc;
pub mod lyapunov;
pub mod scenarios;

pub use error::{Error, Result};

/// Version stamped into every JSON report and summary.
pub const SCHEMA_VERSION: u32 = 1;
