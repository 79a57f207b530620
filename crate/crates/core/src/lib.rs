//! Deterministic discrete-velocity Boltzmann solver for slab domains with
//! isothermal diffuse-reflection walls, plus a certification suite that
//! measures kernel bounds, cycle-escape probabilities, lower bounds on the
//! variable collision frequency and relaxation rates on finished runs.

pub mod cli;
pub mod collision;
pub mod error;
pub mod geometry;
pub mod rng;
pub mod scalar;
pub mod solver;
pub mod verify;
pub mod velocity;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default concrete scalar for the shipped binary and the acceptance suite.
pub type Scalar = f64;
