//! Seeded weight initialization.
//!
//! All random draws go through a `ChaCha8Rng` owned by the caller, so a model
//! id plus a seed fully determines every parameter.

use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Standard normal via Box-Muller, consuming exactly two draws per sample.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn he_conv<T: Scalar>(
    rng: &mut ChaCha8Rng,
    co: usize,
    ci: usize,
    kh: usize,
    kw: usize,
) -> Array4<T> {
    let fan_in = (ci * kh * kw) as f64;
    let std = (2.0 / fan_in).sqrt();
    Array4::from_shape_simple_fn((co, ci, kh, kw), || T::from_f64(normal(rng) * std))
}

pub fn he_linear<T: Scalar>(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Array2<T> {
    let std = (2.0 / inp as f64).sqrt();
    Array2::from_shape_simple_fn((out, inp), || T::from_f64(normal(rng) * std))
}

/// Small-variance normal used for embeddings and class tokens.
pub fn trunc_normal_like<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Vec<T> {
    (0..shape.iter().product::<usize>())
        .map(|_| T::from_f64(normal(rng) * std))
        .collect()
}

pub fn zeros1<T: Scalar>(n: usize) -> Array1<T> {
    Array1::from_elem(n, T::zero())
}

pub fn ones1<T: Scalar>(n: usize) -> Array1<T> {
    Array1::from_elem(n, T::one())
}
