//! Error type shared across the crate.

use alloc::string::String;

/// Errors surfaced by tensor operations, configuration validation, and
/// training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    Shape(String),
    /// A configuration value violates its documented range.
    Config(String),
    /// A loss or intermediate value became non-finite.
    NonFinite(String),
    /// A serialized model could not be decoded.
    Decode(String),
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Decode(msg) => write!(f, "decode failure: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
