//! KAM reducibility engine for the quasi-periodically forced 1D wave equation
//! on finite Galerkin truncations.

pub mod error;
pub mod galerkin;
pub mod gauss;
pub mod generator;
pub mod kam;
pub mod pipeline;
pub mod potential;
pub mod resonance;
pub mod smoothing;
pub mod torus;
pub mod verify;

pub use error::{Error, Result};
