//! Monte Carlo model of cavity-generated spin squeezing retrieved after a
//! free-space release of the atomic ensemble.
//!
//! The crate is split along the physical pipeline:
//!
//! - [`ensemble`]: thermal clouds and their phase-space evolution,
//! - [`coupling`]: per-atom cavity couplings and effective-atom statistics,
//! - [`spin`]: collective pseudo-spin states, effective observables, moment oracles,
//! - [`measurement`]: QND probe model and squeezing estimators,
//! - [`protocols`]: timed sequences, seeded trials and experiment aggregation,
//! - [`stats`]: bootstrap, regressions, error propagation and histograms,
//! - [`cli`]: configuration, orchestration and result files.
//!
//! Units are fixed throughout: micrometres, milliseconds, microkelvin, hertz
//! and radians.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod constants;
pub mod coupling;
pub mod ensemble;
pub mod error;
pub mod measurement;
pub mod protocols;
pub mod rng;
pub mod spin;
pub mod stats;

pub use error::{Error, Result};
