//! Convex envelopes by evolving the convexifying equation
//! `du/dt = min(0, lambda_1(D^2 u))` with a monotone wide-stencil scheme,
//! Monte Carlo validation of its stochastic-control representation, and a
//! non-autonomous gradient flow that rides the evolving field to global
//! minimizers of the convex envelope.

pub mod config;
pub mod diagnostics;
pub mod envelope;
pub mod error;
pub mod field;
pub mod flow;
pub mod output;
pub mod problems;
pub mod run;
pub mod solver;
pub mod stochastic;
pub mod tolerances;

pub use error::{Error, Result};
