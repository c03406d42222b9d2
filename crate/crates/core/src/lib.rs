//! Online struggle detection and anticipation over streaming video features.
//!
//! Layers, from the bottom: [`nn`] (matrices, autodiff, attention), [`data`]
//! (feature files, annotations, splits), [`synth`] (synthetic corpora),
//! [`model`] (LSTR and CMeRT variants plus training), [`stream`] (causal
//! inference), [`metrics`], and [`harness`] / [`cli`] for experiment grids.

pub mod cli;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod stream;
pub mod synth;

pub use error::{Error, FormatError, Result};
pub use scalar::Scalar;

pub type Matrix64 = nn::Matrix<f64>;
pub type Matrix32 = nn::Matrix<f32>;
pub type ParamStore64 = nn::ParamStore<f64>;
pub type ParamStore32 = nn::ParamStore<f32>;
pub type FeatureStream64 = data::FeatureStream<f64>;
pub type FeatureStream32 = data::FeatureStream<f32>;
pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;
pub type StreamEngine64 = stream::StreamEngine<f64>;
pub type StreamEngine32 = stream::StreamEngine<f32>;
