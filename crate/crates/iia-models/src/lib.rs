//! Instrumented vision models on the CPU.
//!
//! This crate provides the model side of the attribution toolkit: convolutional
//! and transformer classifiers whose forward pass can be paused at layer
//! boundaries to capture intermediate tensors, resumed with replacement tensors
//! injected in their place, and differentiated back to any injected tensor.
//!
//! Everything is hand-rolled on `ndarray` so the tap/inject/backward semantics
//! are exact and deterministic: a capture followed by re-injecting the captured
//! tensor reproduces the plain forward pass bit for bit, and gradients are
//! computed by explicit per-layer backward passes rather than a generic tape.
//!
//! The engine is generic over [`Scalar`] (`f32` for full-size models, `f64`
//! for numerically strict test fixtures).

#![deny(unsafe_code)]

pub mod error;
pub mod init;
pub mod instrument;
pub mod layers;
pub mod models;
pub mod scalar;
pub mod weights;

pub use error::{ModelError, Result};
pub use instrument::{
    backward_to_injection, forward_with_injections, ArchKind, GradBundle, GradRequest, ModelMeta,
    Preproc, TapModel,
};
pub use models::{build_model, known_model_ids, AnyModel, AnyRun, BuildOptions, WeightInit};
pub use scalar::Scalar;

#[cfg(test)]
pub(crate) mod fdcheck;
