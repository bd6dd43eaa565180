//! Non-overlapping convolutional networks (stride equal to kernel length)
//! with logistic activations, trained from scratch, and a compressive-sensing
//! benchmark against Kaczmarz (ART) and ISTA (Lasso) baselines.
//!
//! Numeric code is generic over [`Scalar`] (`f32`, `f64`); the aliases at the
//! crate root fix the element type to `f64`, which is what experiments use.

pub mod baselines;
pub mod error;
pub mod experiments;
pub mod layers;
pub mod metrics;
pub mod model_io;
pub mod network;
pub mod numerics;
pub mod scalar;
pub mod training;

pub use error::{Error, Result, StructureViolation};
pub use network::{
    blockwise_lift, build_cascade, validate_nonoverlap, validate_overlap, Initializer,
    OverlapSpec, StageSpec,
};
pub use numerics::{gaussian_sample, matmul, SeededRng};
pub use scalar::Scalar;

pub type Array = numerics::DenseArray<f64>;
pub type KernelBank = layers::ConvKernelBank<f64>;
pub type Beta = layers::BetaVector<f64>;
pub type Cascade = network::CascadeNet<f64>;
pub type Gradients = network::CascadeGradients<f64>;
pub type Measurement = experiments::MeasurementModel<f64>;

pub type ArrayF32 = numerics::DenseArray<f32>;
pub type CascadeF32 = network::CascadeNet<f32>;
