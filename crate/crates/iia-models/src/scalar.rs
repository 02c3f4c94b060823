//! Element type abstraction so the same layer code runs in f32 and f64.

use ndarray::LinalgScalar;
use num_traits::Float;

/// Floating point element of all model tensors.
///
/// `f32` is the production type; `f64` exists so gradient checks against
/// central finite differences can run well below f32 noise.
pub trait Scalar:
    LinalgScalar
    + Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Gauss error function, evaluated in f64 and rounded to Self.
    fn erf(self) -> Self {
        Self::from_f64(libm::erf(self.to_f64()))
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}
