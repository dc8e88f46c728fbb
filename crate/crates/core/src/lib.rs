//! Interpretable prototype-based segmentation of hyperspectral Raman imagery.
//!
//! The crate covers the whole pipeline: synthetic data and file formats
//! ([`hsdata`]), the U-Net baseline and the prototype network
//! ([`models`]), training objectives ([`losses`]), prototype
//! initialization and projection ([`prototypes`]), training ([`train`]),
//! metrics and the bottleneck experiment ([`eval`]), attribution methods
//! ([`interpret`]) and the `ramanseg` command line ([`cli`]).

pub mod cli;
pub mod error;
pub mod eval;
pub mod hsdata;
pub mod interpret;
pub mod losses;
pub mod models;
pub mod prototypes;
pub mod substrate;
pub mod train;

pub use error::{Error, Result};
