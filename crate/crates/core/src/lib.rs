//! Discrete scale invariance in heavy-tailed size distributions.
//!
//! The crate is organised as a pipeline of small, pure modules:
//!
//! * [`dataio`] parses and writes the size, holdings and returns tables.
//! * [`distfit`] fits the lognormal law and builds the CCDF residuals.
//! * [`density`] estimates the log-size density and its (H,q)-derivative.
//! * [`spectral`] computes Lomb periodograms, peaks and their significance.
//! * [`detect`] runs the residual and density detection routes end to end.
//! * [`genmodel`] holds the nonextensive growth model used to synthesise ground truth.
//! * [`layers`] partitions the size axis into geometric layers.
//! * [`portfolio`] measures holdings similarity, ubiquity and performance per layer.
//! * [`pipeline`] wires the stages together and writes the report bundle.
//! * [`selftest`] runs the acceptance checks at desk scale.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod density;
pub mod detect;
pub mod distfit;
pub mod error;
pub mod genmodel;
pub mod layers;
pub mod pipeline;
pub mod portfolio;
pub mod rng;
pub mod selftest;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
