//! File formats, the leave-one-subject-out harness, analysis outputs and the
//! command line for the `ssvep-core` algorithms.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datastore;
pub mod harness;
pub mod manifest;
pub mod outputs;
pub mod pipeline;

pub use ssvep_core as core;
