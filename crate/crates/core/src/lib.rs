//! Spectral token mixing with input-adaptive band reweighting.
//!
//! Tokens are moved to the frequency domain with an orthonormal 2D DCT,
//! reweighted band by band with a mask generated from the spectrum itself,
//! and brought back with the inverse transform. The crate also carries the
//! training loop, the reference oracles and benchmarks, and the `dsm` CLI.

pub mod bench;
pub mod cli;
pub mod config;
pub mod dswg;
pub mod error;
pub mod fsutil;
pub mod model;
pub mod nn;
pub mod spectral;
pub mod train;

pub use error::{DsmError, Result};
