//! Frequency-modulated selective-reflection spectra of a dense two-level
//! atomic vapor at a window interface: forward model, spectrum fitting, and
//! the width-versus-excitation analysis across densities.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod fitkit;
pub mod io;
pub mod lineshape;
pub mod reflectance;
pub mod synth;

pub use error::{Error, Result};
