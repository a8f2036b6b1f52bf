//! Constrained residual reinforcement learning on a simulated slider-crank.
//!
//! A Soft Actor-Critic agent acts inside an absolute or relative tube around
//! a PI speed controller; the `stability` module evaluates Lyapunov gain
//! conditions for that closed loop and stress-tests the resulting error
//! envelopes.

pub mod control;
pub mod error;
pub mod harness;
pub mod nn;
pub mod plant;
pub mod residual;
pub mod sac;
pub mod stability;

pub use error::{Error, Result};
