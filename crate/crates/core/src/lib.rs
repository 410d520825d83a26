//! Simulation and optimization of a single-pulse Rydberg-blockade
//! controlled-PHASE gate between two neutral atoms.
//!
//! The crate is layered bottom-up: [`waveform`] builds the Bernstein-polynomial
//! pulse envelope, [`model`] the rotating-frame Hamiltonians, [`propagator`]
//! integrates them and extracts gate phases, [`optimizer`] searches the
//! waveform parameters, and [`experiment`] turns simulated gates into the
//! measured quantities of a Bell-state experiment.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod format;
pub mod model;
pub mod optimizer;
pub mod propagator;
pub mod quadrature;
pub mod waveform;

pub use error::{Error, Result};
