//! Numerical laboratory for the Cox–Ingersoll–Ross process
//! `dX = (a - bX) dt + sigma sqrt(X) dW` and its `b = 0` member, the squared
//! Bessel process.
//!
//! The crate covers transition and stationary densities, closed-form moments,
//! exact and coupled path simulation, growth and convergence-rate bounds with
//! Monte Carlo certification, drift and diffusion estimators, and
//! stochastic-instability diagnostics.

pub mod bounds;
pub mod cli;
pub mod error;
pub mod estimate;
pub mod instability;
pub mod model;
pub mod numeric;
pub mod simulate;
pub mod specfun;

pub use error::{Error, Result};
