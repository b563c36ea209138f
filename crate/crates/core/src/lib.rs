//! Core SSVEP decoding algorithms.
//!
//! `no_std` with `alloc`. File formats, the evaluation harness and the CLI
//! live in the companion `ssvep` crate.

#![no_std]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod cca;
pub mod combined_cca;
pub mod dataset;
pub mod error;
pub mod nnet;
pub mod signal;
pub mod synthgen;

pub use error::{Error, Result};
