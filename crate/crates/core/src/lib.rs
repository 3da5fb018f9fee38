//! Deterministic simulator of the Curie-Weiss quantum measurement model.
//!
//! The joint state of tested spin(s) and magnet pointer(s) is kept in
//! block-decomposed form: one block per bra/ket pair of spin basis labels
//! (and spatial region labels, for confined detectors), each carrying one
//! complex distribution over the `N + 1` magnetization sectors per
//! apparatus. Blocks evolve independently under a phase-plus-bath generator.
//!
//! Layout:
//! - [`magnet`]: sector grid, multiplicities, free energy, mean-field roots,
//!   registration threshold.
//! - [`bath`]: quasi-Ohmic kernel, flip rates, block generators.
//! - [`engine`]: block state, adaptive integration over a coupling schedule.
//! - [`scenario`]: the five experiment kinds, region weights, readout.
//! - [`oracle`]: independent reference computations used for verification.
//! - [`config`] and [`output`]: JSON run configuration and result files.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod config;
pub mod engine;
pub mod error;
pub mod magnet;
pub mod oracle;
pub mod output;
pub mod scenario;

mod expm;
mod integrator;
mod quadrature;

pub use error::{Error, Result};
pub use num_complex::Complex64;
