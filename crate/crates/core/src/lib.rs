//! Privacy leakage of graph message passing under structural bias, and the
//! DPPGNN dual-privacy defense with the attackers used to evaluate it.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod defense;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod io;
pub mod leakage;
pub mod nn;
pub mod synth;

pub use error::{Error, Result};
