//! Calibration of the division rate in the equal-mitosis growth-fragmentation
//! model from stationary cell-size distributions.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod compare;
pub mod error;
pub mod forward;
pub mod ingest;
pub mod inverse;
pub mod io;
pub mod model;
pub mod mollifier;
pub mod quadrature;
pub mod regselect;
pub mod synth;

pub use error::{Error, Result};
