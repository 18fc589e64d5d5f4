//! Multi-channel speech separation with an alternating time/frequency
//! attention network operating on complex spectrograms.

pub mod error;
pub mod exec;
pub mod model;
pub mod nn;
pub mod objective;
pub mod signal;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
