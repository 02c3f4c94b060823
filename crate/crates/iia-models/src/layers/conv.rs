//! 2D convolution via im2col and GEMM.
//!
//! Per-image layout (C, H, W). Grouped convolution covers depthwise blocks.
//! The backward pass never needs the forward's column matrix: data gradients
//! rebuild it transposed (col2im), parameter gradients re-run im2col on the
//! stored input. This keeps forward memory at one input clone per layer.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, Array3, Array4};

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Arc<Array4<T>>, // (co, ci/groups, kh, kw)
    pub bias: Option<Arc<Array1<T>>>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCtx<T> {
    pub input: Arc<Array3<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        weight: Array4<T>,
        bias: Option<Array1<T>>,
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
    ) -> Self {
        assert!(groups >= 1 && weight.dim().0 % groups == 0);
        Conv2d {
            weight: Arc::new(weight),
            bias: bias.map(Arc::new),
            stride,
            padding,
            groups,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1 * self.groups
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let (kh, kw) = (self.weight.dim().2, self.weight.dim().3);
        let ho = (h + 2 * self.padding.0 - kh) / self.stride.0 + 1;
        let wo = (w + 2 * self.padding.1 - kw) / self.stride.1 + 1;
        (ho, wo)
    }

    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, ConvCtx<T>) {
        let (ci, h, w) = x.dim();
        assert_eq!(ci, self.in_channels(), "conv input channels");
        let (co, cig, kh, kw) = self.weight.dim();
        let (ho, wo) = self.out_hw(h, w);
        let cog = co / self.groups;
        let rows = cig * kh * kw;

        let mut y = Array3::<T>::zeros((co, ho, wo));
        for g in 0..self.groups {
            let col = im2col(x, g * cig, cig, kh, kw, self.stride, self.padding, ho, wo);
            let wmat_owned;
            let wslice = self.weight.slice(s![g * cog..(g + 1) * cog, .., .., ..]);
            let wmat = match wslice.to_shape((cog, rows)) {
                Ok(v) => {
                    wmat_owned = v;
                    wmat_owned.view()
                }
                Err(_) => unreachable!("weight slice is contiguous"),
            };
            let yg = wmat.dot(&col); // (cog, ho*wo)
            let mut dst = y.slice_mut(s![g * cog..(g + 1) * cog, .., ..]);
            dst.assign(
                &yg.to_shape((cog, ho, wo))
                    .expect("gemm output is contiguous"),
            );
        }
        if let Some(b) = &self.bias {
            for (c, mut plane) in y.outer_iter_mut().enumerate() {
                let bc = b[c];
                plane.mapv_inplace(|v| v + bc);
            }
        }
        (
            y,
            ConvCtx {
                input: Arc::new(x.clone()),
            },
        )
    }

    /// Gradient w.r.t. the input.
    pub fn backward(&self, ctx: &ConvCtx<T>, gy: &Array3<T>) -> Array3<T> {
        let (ci, h, w) = ctx.input.dim();
        let (co, cig, kh, kw) = self.weight.dim();
        let cog = co / self.groups;
        let rows = cig * kh * kw;
        let (cgy, ho, wo) = gy.dim();
        assert_eq!(cgy, co, "conv grad channels");

        let mut gx = Array3::<T>::zeros((ci, h, w));
        for g in 0..self.groups {
            let wslice = self.weight.slice(s![g * cog..(g + 1) * cog, .., .., ..]);
            let wmat = wslice.to_shape((cog, rows)).expect("contiguous weight");
            let gyg = gy.slice(s![g * cog..(g + 1) * cog, .., ..]);
            let gymat = gyg.to_shape((cog, ho * wo)).expect("contiguous grad");
            let gcol = wmat.t().dot(&gymat); // (rows, ho*wo)
            col2im(
                &gcol,
                &mut gx,
                g * cig,
                cig,
                kh,
                kw,
                self.stride,
                self.padding,
                ho,
                wo,
            );
        }
        gx
    }

    /// Gradients w.r.t. weight and bias, for the trainable models.
    pub fn grad_params(&self, ctx: &ConvCtx<T>, gy: &Array3<T>) -> (Array4<T>, Array1<T>) {
        let (co, cig, kh, kw) = self.weight.dim();
        let cog = co / self.groups;
        let (_, ho, wo) = gy.dim();

        let mut gw = Array4::<T>::zeros((co, cig, kh, kw));
        for g in 0..self.groups {
            let col = im2col(
                &ctx.input,
                g * cig,
                cig,
                kh,
                kw,
                self.stride,
                self.padding,
                ho,
                wo,
            );
            let gyg = gy.slice(s![g * cog..(g + 1) * cog, .., ..]);
            let gymat = gyg.to_shape((cog, ho * wo)).expect("contiguous grad");
            let gwmat = gymat.dot(&col.t()); // (cog, rows)
            let mut dst = gw.slice_mut(s![g * cog..(g + 1) * cog, .., .., ..]);
            dst.assign(
                &gwmat
                    .to_shape((cog, cig, kh, kw))
                    .expect("gemm output is contiguous"),
            );
        }
        let gb = Array1::from_iter(gy.outer_iter().map(|plane| plane.sum()));
        (gw, gb)
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &Array3<T>,
    c0: usize,
    cig: usize,
    kh: usize,
    kw: usize,
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    ho: usize,
    wo: usize,
) -> Array2<T> {
    let (_, h, w) = x.dim();
    let mut col = Array2::<T>::zeros((cig * kh * kw, ho * wo));
    let cs = col.as_slice_mut().expect("freshly allocated");
    let xs = x.as_slice().expect("standard layout");
    for c in 0..cig {
        let xbase = (c0 + c) * h * w;
        for ki in 0..kh {
            for kj in 0..kw {
                let r = (c * kh + ki) * kw + kj;
                let rbase = r * ho * wo;
                for oh in 0..ho {
                    let ih = (oh * sh + ki) as isize - ph as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let xrow = xbase + ih as usize * w;
                    let obase = rbase + oh * wo;
                    for ow in 0..wo {
                        let iw = (ow * sw + kj) as isize - pw as isize;
                        if iw >= 0 && iw < w as isize {
                            cs[obase + ow] = xs[xrow + iw as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add the column gradient back onto the input plane.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    gcol: &Array2<T>,
    gx: &mut Array3<T>,
    c0: usize,
    cig: usize,
    kh: usize,
    kw: usize,
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    ho: usize,
    wo: usize,
) {
    let (_, h, w) = gx.dim();
    let gs = gcol.as_slice().expect("gemm output");
    let xs = gx.as_slice_mut().expect("standard layout");
    for c in 0..cig {
        let xbase = (c0 + c) * h * w;
        for ki in 0..kh {
            for kj in 0..kw {
                let r = (c * kh + ki) * kw + kj;
                let rbase = r * ho * wo;
                for oh in 0..ho {
                    let ih = (oh * sh + ki) as isize - ph as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let xrow = xbase + ih as usize * w;
                    let obase = rbase + oh * wo;
                    for ow in 0..wo {
                        let iw = (ow * sw + kj) as isize - pw as isize;
                        if iw >= 0 && iw < w as isize {
                            xs[xrow + iw as usize] += gs[obase + ow];
                        }
                    }
                }
            }
        }
    }
}
