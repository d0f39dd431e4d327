//! Chance-constrained open-loop planning for linear systems with Gaussian
//! disturbances of unknown mean and covariance.
//!
//! Joint polytopic target-set constraints are tightened with a tail bound on
//! deviations measured in *sample* standard deviations, giving a convex
//! program over the input sequence and per-constraint risk variables. The
//! crate also builds the scenario program and the known-moments
//! (one-sided Vysochanskij-Petunin) program for comparison, solves all three
//! with one log-barrier interior-point method, and certifies solutions by
//! Monte Carlo.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod barrier;
pub mod concentration;
pub mod demo;
pub mod dynamics;
pub mod error;
pub mod reformulation;
pub mod sampling;
pub mod solver;
pub mod verify;

pub use error::{Error, Result, SampleGate};
