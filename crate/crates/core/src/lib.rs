//! Time-varying posterior-matching feedback coding over the additive white
//! Gaussian multiple-access channel: coefficient schedules, Hadamard
//! correlation control, forcing, decoding by composed affine maps, rate
//! predictions and a seeded Monte Carlo harness.

pub mod channel;
pub mod cli;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fixedpoint;
pub mod hadamard;
pub mod montecarlo;
pub mod numerics;
pub mod rates;

pub use error::{Error, Result};
