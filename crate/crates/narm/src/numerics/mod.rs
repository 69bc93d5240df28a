//! Hand-rolled numeric kernels: dense matrices, stable softmax, dropout
//! masks, a seeded RNG, and a finite-difference gradient utility used by the
//! gradient-check machinery.

pub mod matrix;
pub mod rng;

pub use matrix::{
    dot, dropout_mask, finite_difference_grad, l2_norm, sigmoid, softmax, Matrix,
};
pub use rng::RngState;
