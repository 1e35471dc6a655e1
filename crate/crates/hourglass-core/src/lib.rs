//! Token pruning and recovery for sequence transformers.
//!
//! Video pose transformers carry one token per frame through every block,
//! which is wasteful: neighboring frames are highly redundant. This crate
//! implements an hourglass token schedule instead — after a few blocks the
//! frame tokens are pruned down to a small representative set, the
//! remaining blocks run on that set, and the full temporal resolution is
//! recovered at the end:
//!
//! - [`prune`]: representative-frame selection via density-peaks clustering
//!   (DPC-kNN) plus uniform / attention / motion baselines.
//! - [`recover`]: full-length token recovery through a single multi-head
//!   cross-attention layer with zero-initialized learnable queries, plus
//!   nearest/linear interpolation baselines.
//! - [`model`]: a minimal spatio-temporal pose transformer host (2-D pose
//!   sequences in, 3-D pose sequences out) the schedule plugs into, with
//!   hand-written backward passes and plain-SGD training.
//! - [`flops`]: analytic FLOP and parameter accounting for baseline vs.
//!   pruned configurations.
//! - [`metrics`]: pose-error metrics (MPJPE, PCK, AUC) and selection
//!   statistics.
//! - [`tensor`]: the small dense-tensor layer underneath, with per-op
//!   adjoints and a 64-bit finite-difference gradient checker.
//!
//! The crate is `no_std`-compatible (`alloc` required); disable the default
//! `std` feature for embedded use. File formats and the command-line front
//! end live in the companion `hourglass-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod flops;
pub mod metrics;
pub mod model;
pub mod prune;
pub mod recover;
pub mod serialize;
pub mod tensor;

pub use error::Error;

pub type Result<T> = core::result::Result<T, Error>;
