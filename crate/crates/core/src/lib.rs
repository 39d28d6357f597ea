//! Simulator and analysis toolkit for a noise-driven key exchanger built from
//! a cold-resistor feedback loop.
//!
//! Two amplifiers, one at each party, drive each other over a wire pair while
//! independent band-limited noise generators sit in series with their outputs.
//! Each party picks a gain sign per bit exchange period; the sign of the wire
//! cross-correlation reveals the insecure `LL`/`HH` situations while `LH` and
//! `HL` look identical to an eavesdropper in steady state. Switching
//! transients, however, are nearly deterministic and can be matched against a
//! precomputed template database.
//!
//! The crate is organised by capability:
//!
//! - [`noise`]: seeded band-limited Gaussian sources.
//! - [`circuit`]: the saturating two-amplifier loop and its transients.
//! - [`theory`]: closed-form cold-resistor and steady-state moment formulas.
//! - [`protocol`]: bit exchange, classification and key assembly.
//! - [`attack`]: steady-state and transient-database eavesdroppers.
//! - [`stats`]: estimators and hypothesis tests shared by the above.
//! - [`config`] and [`cli`]: run configuration, manifests and batch commands.
//! - [`acceptance`]: end-to-end checks, also exposed as `coldkey validate`.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod attack;
pub mod circuit;
pub mod cli;
pub mod config;
mod error;
pub mod noise;
pub mod protocol;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};

/// Boltzmann constant, SI exact value in J/K.
pub const BOLTZMANN: f64 = 1.380649e-23;
