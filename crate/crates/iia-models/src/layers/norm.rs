//! Normalization layers.
//!
//! Batch norm runs in inference mode only: with frozen statistics it is an
//! affine map per channel, so it has no saved state and a trivial backward.
//! Layer norm comes in two flavors sharing one kernel: per-row over the last
//! axis (transformer tokens) and per-position over the channel axis (used by
//! the channels-first convnet stages).

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, Axis};

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub weight: Arc<Array1<T>>, // gamma
    pub bias: Arc<Array1<T>>,   // beta
    pub running_mean: Arc<Array1<T>>,
    pub running_var: Arc<Array1<T>>,
    pub eps: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn identity(channels: usize, eps: f64) -> Self {
        BatchNorm2d {
            weight: Arc::new(Array1::from_elem(channels, T::one())),
            bias: Arc::new(Array1::from_elem(channels, T::zero())),
            running_mean: Arc::new(Array1::from_elem(channels, T::zero())),
            running_var: Arc::new(Array1::from_elem(channels, T::one())),
            eps,
        }
    }

    fn scale(&self, c: usize) -> T {
        self.weight[c] / (self.running_var[c] + T::from_f64(self.eps)).sqrt()
    }

    pub fn forward(&self, x: &Array3<T>) -> Array3<T> {
        let mut y = x.clone();
        for (c, mut plane) in y.outer_iter_mut().enumerate() {
            let s = self.scale(c);
            let shift = self.bias[c] - self.running_mean[c] * s;
            plane.mapv_inplace(|v| v * s + shift);
        }
        y
    }

    pub fn backward(&self, gy: &Array3<T>) -> Array3<T> {
        let mut gx = gy.clone();
        for (c, mut plane) in gx.outer_iter_mut().enumerate() {
            let s = self.scale(c);
            plane.mapv_inplace(|v| v * s);
        }
        gx
    }
}

/// Normalizes each row of a (rows, dim) matrix, then applies gamma and beta.
#[derive(Debug, Clone)]
pub struct LayerNorm<T> {
    pub weight: Arc<Array1<T>>,
    pub bias: Arc<Array1<T>>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCtx<T> {
    pub xhat: Arc<Array2<T>>,
    pub rstd: Arc<Array1<T>>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn identity(dim: usize, eps: f64) -> Self {
        LayerNorm {
            weight: Arc::new(Array1::from_elem(dim, T::one())),
            bias: Arc::new(Array1::from_elem(dim, T::zero())),
            eps,
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, LayerNormCtx<T>) {
        let (rows, dim) = x.dim();
        assert_eq!(dim, self.weight.len(), "layernorm dim");
        let inv_d = T::from_f64(1.0 / dim as f64);
        let mut xhat = Array2::<T>::zeros((rows, dim));
        let mut rstd = Array1::<T>::zeros(rows);
        for (r, row) in x.outer_iter().enumerate() {
            let mean = row.sum() * inv_d;
            let mut var = T::zero();
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var = var * inv_d;
            let rs = T::one() / (var + T::from_f64(self.eps)).sqrt();
            rstd[r] = rs;
            let mut out = xhat.row_mut(r);
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
        }
        let mut y = xhat.clone();
        for mut row in y.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.weight[j] + self.bias[j];
            }
        }
        (
            y,
            LayerNormCtx {
                xhat: Arc::new(xhat),
                rstd: Arc::new(rstd),
            },
        )
    }

    pub fn backward(&self, ctx: &LayerNormCtx<T>, gy: &Array2<T>) -> Array2<T> {
        let (rows, dim) = gy.dim();
        let inv_d = T::from_f64(1.0 / dim as f64);
        let mut gx = Array2::<T>::zeros((rows, dim));
        for r in 0..rows {
            let xh = ctx.xhat.index_axis(Axis(0), r);
            let g = gy.index_axis(Axis(0), r);
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for j in 0..dim {
                let gj = g[j] * self.weight[j];
                sum_g += gj;
                sum_gx += gj * xh[j];
            }
            let mean_g = sum_g * inv_d;
            let mean_gx = sum_gx * inv_d;
            let rs = ctx.rstd[r];
            let mut out = gx.row_mut(r);
            for j in 0..dim {
                let gj = g[j] * self.weight[j];
                out[j] = (gj - mean_g - xh[j] * mean_gx) * rs;
            }
        }
        gx
    }
}

/// Layer norm over the channel axis of a (C, H, W) tensor, one normalization
/// per spatial position. Runs the row kernel on a transposed copy.
#[derive(Debug, Clone)]
pub struct LayerNorm2d<T> {
    pub inner: LayerNorm<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNorm2dCtx<T> {
    pub inner: LayerNormCtx<T>,
    pub hw: (usize, usize),
}

impl<T: Scalar> LayerNorm2d<T> {
    pub fn identity(channels: usize, eps: f64) -> Self {
        LayerNorm2d {
            inner: LayerNorm::identity(channels, eps),
        }
    }

    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, LayerNorm2dCtx<T>) {
        let (c, h, w) = x.dim();
        let flat = x
            .to_shape((c, h * w))
            .expect("standard layout")
            .t()
            .to_owned(); // (hw, c)
        let (y2, ctx) = self.inner.forward(&flat);
        let y = y2
            .t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((c, h, w))
            .expect("round trip");
        (
            y,
            LayerNorm2dCtx {
                inner: ctx,
                hw: (h, w),
            },
        )
    }

    pub fn backward(&self, ctx: &LayerNorm2dCtx<T>, gy: &Array3<T>) -> Array3<T> {
        let (c, h, w) = gy.dim();
        let flat = gy
            .to_shape((c, h * w))
            .expect("standard layout")
            .t()
            .to_owned();
        let gx2 = self.inner.backward(&ctx.inner, &flat);
        gx2.t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((c, h, w))
            .expect("round trip")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdcheck::max_rel_err;
    use ndarray::ArrayD;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batchnorm_is_affine_per_channel() {
        let mut bn = BatchNorm2d::<f64>::identity(2, 1e-5);
        bn.weight = Arc::new(Array1::from_vec(vec![2.0, 0.5]));
        bn.bias = Arc::new(Array1::from_vec(vec![1.0, -1.0]));
        bn.running_mean = Arc::new(Array1::from_vec(vec![0.5, 0.0]));
        bn.running_var = Arc::new(Array1::from_vec(vec![4.0, 1.0]));
        let x = Array3::from_shape_vec((2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = bn.forward(&x);
        // channel 0: (x - 0.5) * 2/sqrt(4+eps) + 1, channel 1: x * 0.5/sqrt(1+eps) - 1
        let s0 = 2.0 / (4.0f64 + 1e-5).sqrt();
        let s1 = 0.5 / (1.0f64 + 1e-5).sqrt();
        assert!((y[[0, 0, 0]] - ((1.0 - 0.5) * s0 + 1.0)).abs() < 1e-12);
        assert!((y[[1, 0, 1]] - (4.0 * s1 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn layernorm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ln = LayerNorm::<f64>::identity(9, 1e-6);
        ln.weight = Arc::new(Array1::from_shape_simple_fn(9, || {
            rng.random::<f64>() + 0.5
        }));
        ln.bias = Arc::new(Array1::from_shape_simple_fn(9, || rng.random::<f64>()));
        let x = Array2::from_shape_simple_fn((4, 9), || rng.random::<f64>() * 2.0 - 1.0);
        let gy = Array2::from_shape_simple_fn((4, 9), || rng.random::<f64>() - 0.5);

        let (_, ctx) = ln.forward(&x);
        let gx = ln.backward(&ctx, &gy);
        let ln_f = ln.clone();
        let gy_f = gy.clone();
        let mut f = |xd: &ArrayD<f64>| {
            let x2 = xd.clone().into_dimensionality().unwrap();
            let (y, _) = ln_f.forward(&x2);
            (&y * &gy_f).sum()
        };
        let worst = max_rel_err(
            &mut f,
            &x.clone().into_dyn(),
            &gx.into_dyn(),
            36,
            1e-6,
            &mut rng,
        );
        assert!(worst < 1e-6, "layernorm grad rel err {worst}");
    }

    #[test]
    fn layernorm2d_matches_row_kernel_through_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ln = LayerNorm2d::<f64>::identity(5, 1e-6);
        let x = Array3::from_shape_simple_fn((5, 3, 2), || rng.random::<f64>());
        let (y, ctx) = ln.forward(&x);
        assert_eq!(y.dim(), (5, 3, 2));
        // Each spatial position is normalized over channels: mean ~ 0, var ~ 1.
        for hw in 0..6 {
            let (h, w) = (hw / 2, hw % 2);
            let col: Vec<f64> = (0..5).map(|c| y[[c, h, w]]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-12);
        }
        let gy = Array3::from_shape_simple_fn((5, 3, 2), || rng.random::<f64>() - 0.5);
        let gx = ln.backward(&ctx, &gy);
        let mut f = |xd: &ArrayD<f64>| {
            let x3 = xd.clone().into_dimensionality().unwrap();
            let (y, _) = ln.forward(&x3);
            (&y * &gy).sum()
        };
        let worst = max_rel_err(
            &mut f,
            &x.clone().into_dyn(),
            &gx.into_dyn(),
            30,
            1e-6,
            &mut rng,
        );
        assert!(worst < 1e-6, "layernorm2d grad rel err {worst}");
    }
}
