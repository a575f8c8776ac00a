//! Dark states of a two-tone driven optomechanical cavity in the
//! single-photon strong-coupling regime.
//!
//! All frequencies and rates are expressed in units of the mechanical
//! frequency ω_M; times in units of 1/ω_M.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod darkstate;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod operator;
pub mod specfun;

pub use error::{Error, Result};
