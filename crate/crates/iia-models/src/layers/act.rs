//! Pointwise activations and the row softmax used by attention.

use std::sync::Arc;

use ndarray::{Array2, Array3};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Default)]
pub struct Relu;

#[derive(Debug, Clone)]
pub struct ReluCtx<T> {
    /// Saved output; the subgradient at exactly zero is zero.
    pub out: Arc<Array3<T>>,
}

impl Relu {
    pub fn forward<T: Scalar>(&self, x: &Array3<T>) -> (Array3<T>, ReluCtx<T>) {
        let y = x.mapv(|v| if v > T::zero() { v } else { T::zero() });
        let out = Arc::new(y.clone());
        (y, ReluCtx { out })
    }

    pub fn backward<T: Scalar>(&self, ctx: &ReluCtx<T>, gy: &Array3<T>) -> Array3<T> {
        let mut gx = gy.clone();
        gx.zip_mut_with(&ctx.out, |g, &o| {
            if o <= T::zero() {
                *g = T::zero();
            }
        });
        gx
    }
}

/// Exact (erf-based) GELU.
#[derive(Debug, Clone, Default)]
pub struct Gelu;

#[derive(Debug, Clone)]
pub struct GeluCtx<T> {
    pub input: Arc<Array2<T>>,
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_TAU: f64 = 0.398_942_280_401_432_7; // 1 / sqrt(2*pi)

pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    x * half * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let xf = x.to_f64();
    let phi_big = 0.5 * (1.0 + libm::erf(xf * FRAC_1_SQRT_2));
    let phi_small = INV_SQRT_TAU * (-0.5 * xf * xf).exp();
    T::from_f64(phi_big + xf * phi_small)
}

impl Gelu {
    pub fn forward<T: Scalar>(&self, x: &Array2<T>) -> (Array2<T>, GeluCtx<T>) {
        let y = x.mapv(gelu_scalar);
        (
            y,
            GeluCtx {
                input: Arc::new(x.clone()),
            },
        )
    }

    pub fn backward<T: Scalar>(&self, ctx: &GeluCtx<T>, gy: &Array2<T>) -> Array2<T> {
        let mut gx = ctx.input.mapv(gelu_grad_scalar);
        gx *= gy;
        gx
    }
}

/// GELU over a (C, H, W) tensor, for the convnet blocks that use it.
#[derive(Debug, Clone)]
pub struct GeluCtx3<T> {
    pub input: Arc<Array3<T>>,
}

pub fn gelu3_forward<T: Scalar>(x: &Array3<T>) -> (Array3<T>, GeluCtx3<T>) {
    let y = x.mapv(gelu_scalar);
    (
        y,
        GeluCtx3 {
            input: Arc::new(x.clone()),
        },
    )
}

pub fn gelu3_backward<T: Scalar>(ctx: &GeluCtx3<T>, gy: &Array3<T>) -> Array3<T> {
    let mut gx = ctx.input.mapv(gelu_grad_scalar);
    gx *= gy;
    gx
}

/// Numerically stable softmax over each row, in place.
pub fn softmax_rows_inplace<T: Scalar>(x: &mut Array2<T>) {
    for mut row in x.outer_iter_mut() {
        let mut m = T::neg_infinity();
        for &v in row.iter() {
            if v > m {
                m = v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
}

/// Backward through a row softmax whose forward output was `a`:
/// gs = a * (ga - rowsum(ga * a)).
pub fn softmax_rows_backward<T: Scalar>(a: &Array2<T>, ga: &Array2<T>) -> Array2<T> {
    let mut gs = Array2::<T>::zeros(a.dim());
    for ((mut out, arow), garow) in gs
        .outer_iter_mut()
        .zip(a.outer_iter())
        .zip(ga.outer_iter())
    {
        let mut dot = T::zero();
        for (&av, &gv) in arow.iter().zip(garow.iter()) {
            dot += av * gv;
        }
        for ((o, &av), &gv) in out.iter_mut().zip(arow.iter()).zip(garow.iter()) {
            *o = av * (gv - dot);
        }
    }
    gs
}
