//! Micro deep-learning engine for comparing gradient saliency methods on
//! full-precision and binarized convolutional networks.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the working precision used by trained models and model files.

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod net;
pub mod ops;
pub mod rng;
pub mod saliency;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Network32 = net::Network<f32>;
pub type Network64 = net::Network<f64>;
pub type ForwardTrace32 = net::ForwardTrace<f32>;
pub type Dataset32 = data::Dataset<f32>;
pub type SaliencyMap32 = saliency::SaliencyMap<f32>;
pub type SweepResult32 = analysis::SweepResult<f32>;
