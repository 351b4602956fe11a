//! Flow-based recurrent mixture density networks.
//!
//! A recurrent backbone emits per-step mixture parameters, an affine
//! coupling flow maps each target into a latent space, and training
//! minimises the mixture negative log-likelihood plus the flow's
//! log-determinant term. The crate also carries the pieces needed to use
//! such a model as a learned simulator: sampling through the inverse flow,
//! a linear controller and a CMA-ES optimiser for dream rollouts.

pub mod control;
pub mod data;
pub mod diffcore;
pub mod distributions;
mod error;
pub mod flow;
pub mod linalg;
pub mod model;
pub mod recurrent;
pub mod rng;

pub use error::{Error, Result};
