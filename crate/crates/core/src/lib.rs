//! Constructive ReLU networks for radial functions, and deep radial kernel
//! networks initialised from one-vs-rest support vector machines.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod drkn;
pub mod error;
pub mod foldbuild;
pub mod kernelapprox;
pub mod netcore;
pub mod scalar;
pub mod svmio;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network = netcore::Network<f64>;
pub type Layer = netcore::Layer<f64>;
pub type RadialProfile = kernelapprox::RadialProfile<f64>;
pub type Built = foldbuild::Built<f64>;
pub type MultiClassSvm = svmio::MultiClassSvm<f64>;
pub type Dataset = svmio::Dataset<f64>;
pub type DrknModel = drkn::DrknModel<f64>;
pub type RbfModel = drkn::RbfModel<f64>;
