//! Transformer-based seizure prediction from multi-channel EEG: signal
//! ingestion, windowing, a small reverse-mode autodiff engine, the model
//! zoo, training and evaluation.

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod epoching;
mod error;
pub mod evaluation;
pub mod experiment;
pub mod models;
pub mod params;
pub mod rng;
mod scalar;
pub mod signal;
mod tensor;
pub mod training;

pub use error::{Error, ErrorKind, ShapeError};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Model32 = models::Model<f32>;
pub type Model64 = models::Model<f64>;
