//! Session-based next-item recommendation.
//!
//! The crate implements an attention-augmented GRU encoder over click
//! sessions with a bi-linear decoder, trained with Adam on truncated session
//! prefixes, plus the data pipeline that turns raw click logs into training
//! examples, popularity / nearest-neighbour baselines, and exact ranking
//! evaluation. Everything is plain f64 on the CPU and every random choice is
//! driven by an explicit seed, so runs reproduce bit for bit.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngState};
