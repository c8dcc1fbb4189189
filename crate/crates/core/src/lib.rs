//! Uncertainty quantification for neural image classifiers: ensemble
//! (model) uncertainty, per-sample (data) uncertainty scores and
//! reconstruction-based out-of-distribution detection, plus the tensor,
//! network and evaluation machinery they run on.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod nn;
pub mod rng;
pub mod sae;
pub mod scoring;
pub mod tensor;

pub use error::{Result, UqError};
pub use rng::Rng;
pub use tensor::Tensor;
