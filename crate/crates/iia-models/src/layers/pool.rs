//! Pooling layers.

use std::sync::Arc;

use ndarray::{Array1, Array3};

use crate::scalar::Scalar;

/// Max pooling with optional padding. Padded cells never win the max.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct MaxPoolCtx {
    /// Flat (h*w) source index of the winner, per output cell and channel.
    pub argmax: Arc<Array3<u32>>,
    pub in_hw: (usize, usize),
}

impl MaxPool2d {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = (h + 2 * self.padding.0 - self.kernel.0) / self.stride.0 + 1;
        let wo = (w + 2 * self.padding.1 - self.kernel.1) / self.stride.1 + 1;
        (ho, wo)
    }

    pub fn forward<T: Scalar>(&self, x: &Array3<T>) -> (Array3<T>, MaxPoolCtx) {
        let (c, h, w) = x.dim();
        let (ho, wo) = self.out_hw(h, w);
        let mut y = Array3::<T>::zeros((c, ho, wo));
        let mut arg = Array3::<u32>::zeros((c, ho, wo));
        for ch in 0..c {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0u32;
                    for ki in 0..self.kernel.0 {
                        let ih = (oh * self.stride.0 + ki) as isize - self.padding.0 as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for kj in 0..self.kernel.1 {
                            let iw = (ow * self.stride.1 + kj) as isize - self.padding.1 as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let v = x[[ch, ih as usize, iw as usize]];
                            if v > best {
                                best = v;
                                best_idx = (ih as usize * w + iw as usize) as u32;
                            }
                        }
                    }
                    y[[ch, oh, ow]] = best;
                    arg[[ch, oh, ow]] = best_idx;
                }
            }
        }
        (
            y,
            MaxPoolCtx {
                argmax: Arc::new(arg),
                in_hw: (h, w),
            },
        )
    }

    pub fn backward<T: Scalar>(&self, ctx: &MaxPoolCtx, gy: &Array3<T>) -> Array3<T> {
        let (c, ho, wo) = gy.dim();
        let (h, w) = ctx.in_hw;
        let mut gx = Array3::<T>::zeros((c, h, w));
        for ch in 0..c {
            for oh in 0..ho {
                for ow in 0..wo {
                    let idx = ctx.argmax[[ch, oh, ow]] as usize;
                    gx[[ch, idx / w, idx % w]] += gy[[ch, oh, ow]];
                }
            }
        }
        gx
    }
}

/// Average pooling, no padding. Used by transition layers with exact tiling.
#[derive(Debug, Clone)]
pub struct AvgPool2d {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct AvgPoolCtx {
    pub in_hw: (usize, usize),
}

impl AvgPool2d {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - self.kernel.0) / self.stride.0 + 1,
            (w - self.kernel.1) / self.stride.1 + 1,
        )
    }

    pub fn forward<T: Scalar>(&self, x: &Array3<T>) -> (Array3<T>, AvgPoolCtx) {
        let (c, h, w) = x.dim();
        let (ho, wo) = self.out_hw(h, w);
        let inv = T::from_f64(1.0 / (self.kernel.0 * self.kernel.1) as f64);
        let mut y = Array3::<T>::zeros((c, ho, wo));
        for ch in 0..c {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = T::zero();
                    for ki in 0..self.kernel.0 {
                        for kj in 0..self.kernel.1 {
                            acc += x[[ch, oh * self.stride.0 + ki, ow * self.stride.1 + kj]];
                        }
                    }
                    y[[ch, oh, ow]] = acc * inv;
                }
            }
        }
        (y, AvgPoolCtx { in_hw: (h, w) })
    }

    pub fn backward<T: Scalar>(&self, ctx: &AvgPoolCtx, gy: &Array3<T>) -> Array3<T> {
        let (c, ho, wo) = gy.dim();
        let (h, w) = ctx.in_hw;
        let inv = T::from_f64(1.0 / (self.kernel.0 * self.kernel.1) as f64);
        let mut gx = Array3::<T>::zeros((c, h, w));
        for ch in 0..c {
            for oh in 0..ho {
                for ow in 0..wo {
                    let g = gy[[ch, oh, ow]] * inv;
                    for ki in 0..self.kernel.0 {
                        for kj in 0..self.kernel.1 {
                            gx[[ch, oh * self.stride.0 + ki, ow * self.stride.1 + kj]] += g;
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Global average over the spatial plane: (C, H, W) -> (C).
pub fn global_avg_pool<T: Scalar>(x: &Array3<T>) -> Array1<T> {
    let (_, h, w) = x.dim();
    let inv = T::from_f64(1.0 / (h * w) as f64);
    Array1::from_iter(x.outer_iter().map(|plane| plane.sum() * inv))
}

pub fn global_avg_pool_backward<T: Scalar>(
    gy: &Array1<T>,
    (c, h, w): (usize, usize, usize),
) -> Array3<T> {
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let mut gx = Array3::<T>::zeros((c, h, w));
    for (ch, mut plane) in gx.outer_iter_mut().enumerate() {
        plane.fill(gy[ch] * inv);
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdcheck::max_rel_err;
    use ndarray::ArrayD;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn maxpool_hand_example_with_padding() {
        // 1x2x2 input [[1,2],[3,4]], kernel 3 stride 2 pad 1 -> single cell = 4.
        let x = Array3::from_shape_vec((1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mp = MaxPool2d {
            kernel: (3, 3),
            stride: (2, 2),
            padding: (1, 1),
        };
        let (y, ctx) = mp.forward(&x);
        assert_eq!(y.dim(), (1, 1, 1));
        assert_eq!(y[[0, 0, 0]], 4.0);
        let gy = Array3::from_elem((1, 1, 1), 2.5);
        let gx = mp.backward(&ctx, &gy);
        assert_eq!(gx[[0, 1, 1]], 2.5);
        assert_eq!(gx.sum(), 2.5);
    }

    #[test]
    fn pool_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Array3::from_shape_simple_fn((3, 8, 8), || rng.random::<f64>());
        let mp = MaxPool2d {
            kernel: (3, 3),
            stride: (2, 2),
            padding: (1, 1),
        };
        let (y0, ctx) = mp.forward(&x);
        let gy = Array3::from_shape_simple_fn(y0.dim(), || rng.random::<f64>() - 0.5);
        let gx = mp.backward(&ctx, &gy);
        let mut f = |xd: &ArrayD<f64>| {
            let x3 = xd.clone().into_dimensionality().unwrap();
            let (y, _) = mp.forward(&x3);
            (&y * &gy).sum()
        };
        // Small step: a tie flip under perturbation would invalidate the check,
        // random continuous inputs make that probability zero.
        let worst = max_rel_err(
            &mut f,
            &x.clone().into_dyn(),
            &gx.clone().into_dyn(),
            50,
            1e-7,
            &mut rng,
        );
        assert!(worst < 1e-5, "maxpool grad rel err {worst}");

        let ap = AvgPool2d {
            kernel: (2, 2),
            stride: (2, 2),
        };
        let (ya, actx) = ap.forward(&x);
        let gya = Array3::from_shape_simple_fn(ya.dim(), || rng.random::<f64>() - 0.5);
        let gxa = ap.backward(&actx, &gya);
        let mut fa = |xd: &ArrayD<f64>| {
            let x3 = xd.clone().into_dimensionality().unwrap();
            let (y, _) = ap.forward(&x3);
            (&y * &gya).sum()
        };
        let worst = max_rel_err(
            &mut fa,
            &x.clone().into_dyn(),
            &gxa.into_dyn(),
            50,
            1e-6,
            &mut rng,
        );
        assert!(worst < 1e-6, "avgpool grad rel err {worst}");
    }

    #[test]
    fn global_pool_roundtrip() {
        let x = Array3::from_shape_vec((2, 1, 2), vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let y = global_avg_pool(&x);
        assert_eq!(y.to_vec(), vec![2.0, 6.0]);
        let gx = global_avg_pool_backward(&Array1::from_vec(vec![1.0, 2.0]), (2, 1, 2));
        assert_eq!(gx[[0, 0, 0]], 0.5);
        assert_eq!(gx[[1, 0, 1]], 1.0);
    }
}
