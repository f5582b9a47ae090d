//! Adaptive Bayesian estimation of two phases in a three-mode interferometer.
//!
//! The crate contains the forward model of the interferometer
//! ([`interferometer`]), the thermo-optic control response
//! ([`power_model`]), a sequential Monte Carlo posterior with Liu-West
//! resampling ([`smc`]), four control strategies ([`strategies`]) and the
//! simulation harness that reproduces loss-versus-probe-count campaigns
//! against the Cramér-Rao bound ([`harness`]).

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod interferometer;
pub mod optimize;
pub mod output;
pub mod phase;
pub mod power_model;
pub mod rng;
pub mod smc;
pub mod strategies;

pub use error::{Error, Result};
pub use phase::PhaseVector;
