//! Confidence regions for averaged SGD under heavy-tailed gradient noise,
//! calibrated by self-normalized subsampling.
//!
//! The crate is organised bottom-up: [`noise`] samplers feed the [`models`]
//! gradient oracles, [`sgd`] runs the averaged recursion, and [`inference`]
//! turns a main trajectory plus short restarted blocks into a region. The
//! [`oracle_aware`] and [`baselines`] modules provide comparison methods,
//! [`diagnostics`] the tail-index checks, and [`harness`] the Monte Carlo
//! coverage experiments.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod harness;
pub mod inference;
pub mod models;
pub mod noise;
pub mod oracle_aware;
pub mod quadrature;
pub mod rng;
pub mod sgd;

pub use error::{Error, Result};
pub use exec::Execution;
pub use inference::{ConfidenceRegion, Functional, SubsampleConfig};
pub use rng::RngStream;
pub use sgd::{RunningStats, StepSchedule};
