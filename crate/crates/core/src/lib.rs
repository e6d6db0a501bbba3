//! Dustbin-augmented classifiers and gradient-sign adversaries.
//!
//! A classifier trained with an extra reject ("dustbin") output on natural
//! out-of-distribution data, next to a naive classifier, evaluated against
//! FGS and targeted FGS adversaries in black-box and white-box settings, plus
//! PCA views of their feature spaces.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod attack;
pub mod data;
pub mod digest;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod harness;
pub mod nn;
pub mod parallel;
pub mod scalar;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Deterministic RNG used for initialization, shuffling, dropout and sampling.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Model32 = nn::Model<f32>;
pub type Model64 = nn::Model<f64>;
