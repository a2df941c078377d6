//! ReLU implicit (deep equilibrium) networks: forward fixed-point solves,
//! implicit gradients, limit kernels and monitored gradient descent.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod data;
pub mod error;
pub mod gradients;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod theory;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = numerics::DenseMatrix<f64>;
pub type Matrix32 = numerics::DenseMatrix<f32>;
pub type Vector64 = numerics::DenseVector<f64>;
pub type Vector32 = numerics::DenseVector<f32>;
pub type Params64 = model::Params<f64>;
pub type Params32 = model::Params<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Gradients64 = gradients::GradientSet<f64>;
pub type Gradients32 = gradients::GradientSet<f32>;
pub type BatchState64 = model::BatchState<f64>;
pub type BatchState32 = model::BatchState<f32>;
