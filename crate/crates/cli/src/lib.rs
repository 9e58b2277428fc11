//! Command-line driver for the `heatsource` experiments: config parsing,
//! runs and report files.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
pub mod config;
pub mod expr;
pub mod report;

pub use commands::{run, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SOLVER};
