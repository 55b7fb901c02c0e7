//! Internal-model-based online optimization.
//!
//! Online optimizers for costs whose linear term follows a known rational
//! model are synthesized as robust controllers (via small dense LMIs),
//! simulated against gradient baselines, and checked against H∞ tracking
//! error bounds.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod lmi;
pub mod online_algorithms;
pub mod poly;
pub mod problems;
pub mod signal_models;
pub mod synthesis;

pub use error::{Error, Result};
