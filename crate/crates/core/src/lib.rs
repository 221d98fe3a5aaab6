//! Gaussian belief propagation through nonsmooth (switched) dynamics.

// `!(x > 0.0)` is the NaN-rejecting form used throughout the argument checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod gaussmath;
pub mod integrate;
pub mod moments;
pub mod montecarlo;
pub mod ocp;
pub mod quad;
pub mod systems;

pub use error::{Error, Result};
