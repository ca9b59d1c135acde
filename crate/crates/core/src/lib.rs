//! Agile temporal convolutional networks: layers, blocks, model builder,
//! cost analyzer, training loop and data plumbing.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f32` case.

pub mod analyzer;
pub mod blocks;
pub mod builder;
pub mod data;
pub mod error;
pub mod init;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use builder::{build, build_atcn, build_gtcn, preset, GroupRule, GtcnConfig, ModelConfig, PresetName};
pub use error::{Error, Result};
pub use model::{Architecture, Model};
pub use nn::{ActivationKind, Ctx, Layer, Mode, PaddingMode};
pub use scalar::Scalar;
pub use tensor::{Prng, Shape};

pub type Tensor<T = f32> = tensor::Tensor<T>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Dataset32 = training::Dataset<f32>;
