//! Simulation and estimation toolkit for a Rydberg superatom coupled to an
//! optical cavity: linear-response EIT spectra, blockade statistics,
//! single-shot detection records with quantum jumps, closed-form detection
//! histograms, and the fits that connect them.

pub mod detection;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod fitting;
pub mod format;
pub mod optim;
pub mod params;
pub mod quad;
pub mod rng;
pub mod spectra;

pub use error::{Error, Result};
pub use params::{SystemParams, load_config};
