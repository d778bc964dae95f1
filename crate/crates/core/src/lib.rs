//! Random-loop representations of lattice Bose gases and classical
//! `|φ|⁴`-type field theories on a torus, with exact small-instance oracles.

pub mod cluster;
pub mod error;
pub mod field;
pub mod interactions;
pub mod kernel;
pub mod largemass;
pub mod lattice;
pub mod linalg;
pub mod loop_mc;
pub mod mc;
pub mod paths;
pub mod quad;
pub mod quantum;
pub mod special;
pub mod volume;

pub use error::{Error, Result};
