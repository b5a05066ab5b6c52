//! Training and analysis toolkit for spiking neural networks at desk scale:
//! a minimal reverse-mode autodiff engine, surrogate-gradient IF neurons,
//! teacher→student feature and logit distillation with blur-masked feature
//! restoration, and firing-rate / synaptic-operation energy analytics.

pub mod analytics;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod neuron;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};

/// Training-precision tensor.
pub type Tensor32 = tensor::Tensor<f32>;
/// Oracle-precision tensor, used by the gradient-check suite.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = tape::Tape<f32>;
pub type Tape64 = tape::Tape<f64>;
