//! Sojourn ruin probabilities of a two-line fractional Brownian risk model.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod config;
pub mod error;
pub mod fbm;
pub mod harness;
pub mod mc;
pub mod model;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
