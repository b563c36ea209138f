use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid filter specification: {0}")]
    InvalidFilter(String),
    #[error("signal of {len} samples is too short for edge padding of {padlen} samples")]
    SignalTooShort { len: usize, padlen: usize },
    #[error("decimation factor must be positive")]
    ZeroFactor,
    #[error("invalid epoch layout: {0}")]
    Segmentation(String),
    #[error("unknown class id {0}")]
    UnknownClass(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("reference harmonic {harmonic} of {frequency_hz} Hz is at or above Nyquist")]
    AliasedReference { frequency_hz: f64, harmonic: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("class {0} has no training data")]
    MissingClass(usize),
    #[error("invalid layer id {0}; expected 1, 2 or 3")]
    InvalidLayer(usize),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },
    #[error("invalid dataset: {0}")]
    Dataset(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
