//! Monte Carlo simulator and analysis toolkit for feedback cooling of a
//! single neutral atom trapped inside a high-finesse optical cavity.
//!
//! The crate simulates the stochastic radial motion of one atom in a
//! switchable Gaussian dipole trap, shot-noise-limited transmission
//! detection, and the two-window feedback controller, and implements the
//! measurement protocols built on top of them: storage-time ensembles,
//! ramp-down thermometry with adiabatic energy reconstruction, feedback
//! toggling, and intensity correlations.

pub mod analysis;
pub mod config;
pub mod constants;
pub mod controller;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod model;
pub mod numeric;
pub mod rng;

pub use error::{Error, Result};
