//! Kinetic transport on a star of circles joined at one junction with delayed,
//! scattering transmission conditions.
//!
//! The crate builds velocity-discretized gain operators, certifies stability
//! through their spectral radius, evaluates explicit input-to-state constants and
//! simulates the transport system to check those constants against trajectories.

pub mod analysis;
pub mod error;
pub mod history;
pub mod model;
pub mod operators;
pub mod simulator;
pub mod spectral;

pub use error::{Error, Result};
