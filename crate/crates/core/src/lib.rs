//! Numerical laboratory for transport-diffusion equations driven by Lévy operators
//! and Morrey-Campanato drifts on the periodic torus.

pub mod bump;
pub mod config;
pub mod drift;
pub mod error;
pub mod grid;
pub mod holder;
pub mod levy;
pub mod molecule;
pub mod io;
pub mod quad;
pub mod runner;
pub mod solver;
pub mod spaces;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Field, Grid, Spectral};
pub use levy::{KernelSpec, LevyKernel, LevySymbol, Profile};
