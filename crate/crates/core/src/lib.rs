//! Monte Carlo toolkit for Gruschin-type SDEs driven by subordinated Brownian
//! motions: subordinator sampling, deterministic and random time changes,
//! coupling by change of measure with Girsanov weights, and numerical checks
//! of log-Harnack and entropy inequalities.

pub mod bernstein;
pub mod cli;
pub mod config;
pub mod coupling;
pub mod error;
pub mod gruschin;
pub mod harnack;
pub mod moments;
pub mod parallel;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod subordinator;
pub mod timechange;

pub use error::{Error, Result};
