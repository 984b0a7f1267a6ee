//! Coded-diffraction phase retrieval with a learnable measurement operator
//! and a deep-unfolded reconstruction network.

pub mod baselines;
pub mod cdp;
pub mod cli;
pub mod datakit;
pub mod error;
pub mod field;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod selfcheck;
pub mod train;

pub use error::{Error, Result};
