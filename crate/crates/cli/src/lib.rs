//! Experiment driver for `loopgas`: JSON configs in, CSV tables out.

pub mod config;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod selftest;
