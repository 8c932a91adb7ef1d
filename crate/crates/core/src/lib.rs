//! Bank account mechanisms for multi-stage single-buyer revenue maximization: execution,
//! conversion to and from direct mechanisms, approximation mechanisms and bounds, an
//! FPTAS for discrete one-item stages, and brute-force verification oracles.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod approx;
pub mod bam_engine;
pub mod dp_fptas;
pub mod error;
pub mod model;
pub mod stage_mechs;
pub mod verify;

pub use error::{BamError, Result};
