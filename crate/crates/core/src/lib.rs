//! Ordinal-response identification toolkit: latent distributions, reporting
//! functions, implied weights, simulation, estimation and diagnostics.

pub mod cli;
pub mod diagnose;
pub mod error;
pub mod estimate;
pub mod latent;
pub mod quad;
pub mod reporting;
pub mod seed;
pub mod simulate;
pub mod weights;

pub use error::{Error, Result};
