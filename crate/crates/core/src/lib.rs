//! Network size vs. weight precision trade-off laboratory.
//!
//! Trains fully-connected and convolutional networks at several sizes,
//! quantizes their weights to `2^n - 1` levels (directly or with
//! retraining), and measures the effective compression ratio between
//! floating-point and fixed-point networks of equal accuracy.

pub mod checkpoint;
pub mod data;
pub mod ecr;
pub mod error;
pub mod hash;
pub mod nn;
pub mod quant;
pub mod sweep;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
