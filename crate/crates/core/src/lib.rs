//! Desk-scale simulator of entangled slimmable quantum federated learning.
//!
//! Multi-depth parameterized quantum circuits train locally with a fidelity
//! distillation regularizer; their accumulated gradients cross a simulated
//! Rayleigh-fading uplink as superposition-coded per-layer messages, and a
//! server federates whatever survives successive decoding. A convergence
//! bound calculator and power-allocation optimizer close the loop.

pub mod channel;
pub mod config;
pub mod data;
pub mod error;
pub mod esqnn;
pub mod federate;
pub mod metrics;
pub mod poweropt;
pub mod qsim;
pub mod seeds;
pub mod train;

pub use error::{Error, Result};
