//! Composite convnet blocks assembled from the primitive layers.

use std::sync::Arc;

use ndarray::{s, Array1, Array3};

use super::act::{gelu3_backward, gelu3_forward, GeluCtx3, Relu, ReluCtx};
use super::conv::{Conv2d, ConvCtx};
use super::norm::{BatchNorm2d, LayerNorm2d, LayerNorm2dCtx};
use super::pool::{AvgPool2d, AvgPoolCtx};
use crate::scalar::Scalar;

/// Residual bottleneck: 1x1 reduce, 3x3 (carries the stride), 1x1 expand,
/// with an optional projection shortcut.
#[derive(Debug, Clone)]
pub struct Bottleneck<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub conv3: Conv2d<T>,
    pub bn3: BatchNorm2d<T>,
    pub downsample: Option<(Conv2d<T>, BatchNorm2d<T>)>,
}

#[derive(Debug, Clone)]
pub struct BottleneckCtx<T> {
    c1: ConvCtx<T>,
    r1: ReluCtx<T>,
    c2: ConvCtx<T>,
    r2: ReluCtx<T>,
    c3: ConvCtx<T>,
    cd: Option<ConvCtx<T>>,
    r_out: ReluCtx<T>,
}

impl<T: Scalar> Bottleneck<T> {
    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, BottleneckCtx<T>) {
        let (h, c1) = self.conv1.forward(x);
        let h = self.bn1.forward(&h);
        let (h, r1) = Relu.forward(&h);
        let (h, c2) = self.conv2.forward(&h);
        let h = self.bn2.forward(&h);
        let (h, r2) = Relu.forward(&h);
        let (h, c3) = self.conv3.forward(&h);
        let mut out = self.bn3.forward(&h);
        let cd = match &self.downsample {
            Some((conv, bn)) => {
                let (idn, cd) = conv.forward(x);
                out += &bn.forward(&idn);
                Some(cd)
            }
            None => {
                out += x;
                None
            }
        };
        let (y, r_out) = Relu.forward(&out);
        (
            y,
            BottleneckCtx {
                c1,
                r1,
                c2,
                r2,
                c3,
                cd,
                r_out,
            },
        )
    }

    pub fn backward(&self, ctx: &BottleneckCtx<T>, gy: &Array3<T>) -> Array3<T> {
        let g_sum = Relu.backward(&ctx.r_out, gy);
        // main branch
        let g = self.bn3.backward(&g_sum);
        let g = self.conv3.backward(&ctx.c3, &g);
        let g = Relu.backward(&ctx.r2, &g);
        let g = self.bn2.backward(&g);
        let g = self.conv2.backward(&ctx.c2, &g);
        let g = Relu.backward(&ctx.r1, &g);
        let g = self.bn1.backward(&g);
        let mut gx = self.conv1.backward(&ctx.c1, &g);
        // shortcut
        match (&self.downsample, &ctx.cd) {
            (Some((conv, bn)), Some(cd)) => {
                let gi = bn.backward(&g_sum);
                gx += &conv.backward(cd, &gi);
            }
            _ => gx += &g_sum,
        }
        gx
    }
}

/// One densely connected layer: the input grows by `growth` channels.
#[derive(Debug, Clone)]
pub struct DenseLayer<T> {
    pub norm1: BatchNorm2d<T>,
    pub conv1: Conv2d<T>, // 1x1 to bn_size*growth
    pub norm2: BatchNorm2d<T>,
    pub conv2: Conv2d<T>, // 3x3 to growth
}

#[derive(Debug, Clone)]
pub struct DenseLayerCtx<T> {
    r1: ReluCtx<T>,
    c1: ConvCtx<T>,
    r2: ReluCtx<T>,
    c2: ConvCtx<T>,
}

impl<T: Scalar> DenseLayer<T> {
    fn forward(&self, x: &Array3<T>) -> (Array3<T>, DenseLayerCtx<T>) {
        let h = self.norm1.forward(x);
        let (h, r1) = Relu.forward(&h);
        let (h, c1) = self.conv1.forward(&h);
        let h = self.norm2.forward(&h);
        let (h, r2) = Relu.forward(&h);
        let (new, c2) = self.conv2.forward(&h);
        (new, DenseLayerCtx { r1, c1, r2, c2 })
    }

    fn backward(&self, ctx: &DenseLayerCtx<T>, g_new: &Array3<T>) -> Array3<T> {
        let g = self.conv2.backward(&ctx.c2, g_new);
        let g = Relu.backward(&ctx.r2, &g);
        let g = self.norm2.backward(&g);
        let g = self.conv1.backward(&ctx.c1, &g);
        let g = Relu.backward(&ctx.r1, &g);
        self.norm1.backward(&g)
    }
}

/// A run of dense layers with channel concatenation.
#[derive(Debug, Clone)]
pub struct DenseBlock<T> {
    pub layers: Vec<DenseLayer<T>>,
}

#[derive(Debug, Clone)]
pub struct DenseBlockCtx<T> {
    ctxs: Vec<DenseLayerCtx<T>>,
    in_channels: usize,
    growth: usize,
}

impl<T: Scalar> DenseBlock<T> {
    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, DenseBlockCtx<T>) {
        let (c0, h, w) = x.dim();
        let growth = self.layers[0].conv2.out_channels();
        let total = c0 + growth * self.layers.len();
        let mut acc = Array3::<T>::zeros((total, h, w));
        acc.slice_mut(s![0..c0, .., ..]).assign(x);
        let mut ctxs = Vec::with_capacity(self.layers.len());
        let mut filled = c0;
        for layer in &self.layers {
            let cur = acc.slice(s![0..filled, .., ..]).to_owned();
            let (new, ctx) = layer.forward(&cur);
            acc.slice_mut(s![filled..filled + growth, .., ..])
                .assign(&new);
            filled += growth;
            ctxs.push(ctx);
        }
        (
            acc,
            DenseBlockCtx {
                ctxs,
                in_channels: c0,
                growth,
            },
        )
    }

    pub fn backward(&self, ctx: &DenseBlockCtx<T>, gy: &Array3<T>) -> Array3<T> {
        // The concatenated output grad seeds every prefix slice; walking the
        // layers in reverse accumulates each layer's contribution onto the
        // gradient of its own input prefix.
        let mut g_acc = gy.clone();
        let growth = ctx.growth;
        let mut filled = ctx.in_channels + growth * self.layers.len();
        for (layer, lctx) in self.layers.iter().zip(ctx.ctxs.iter()).rev() {
            filled -= growth;
            let g_new = g_acc.slice(s![filled..filled + growth, .., ..]).to_owned();
            let g_in = layer.backward(lctx, &g_new);
            let mut prefix = g_acc.slice_mut(s![0..filled, .., ..]);
            prefix += &g_in;
        }
        g_acc.slice(s![0..ctx.in_channels, .., ..]).to_owned()
    }
}

/// Dense transition: norm, relu, 1x1 conv, 2x2 average pool.
#[derive(Debug, Clone)]
pub struct Transition<T> {
    pub norm: BatchNorm2d<T>,
    pub conv: Conv2d<T>,
    pub pool: AvgPool2d,
}

#[derive(Debug, Clone)]
pub struct TransitionCtx<T> {
    r: ReluCtx<T>,
    c: ConvCtx<T>,
    p: AvgPoolCtx,
}

impl<T: Scalar> Transition<T> {
    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, TransitionCtx<T>) {
        let h = self.norm.forward(x);
        let (h, r) = Relu.forward(&h);
        let (h, c) = self.conv.forward(&h);
        let (y, p) = self.pool.forward(&h);
        (y, TransitionCtx { r, c, p })
    }

    pub fn backward(&self, ctx: &TransitionCtx<T>, gy: &Array3<T>) -> Array3<T> {
        let g = self.pool.backward(&ctx.p, gy);
        let g = self.conv.backward(&ctx.c, &g);
        let g = Relu.backward(&ctx.r, &g);
        self.norm.backward(&g)
    }
}

/// Per-channel scale, the residual branch gain of convnext blocks.
#[derive(Debug, Clone)]
pub struct ChannelScale<T> {
    pub gamma: Arc<Array1<T>>,
}

impl<T: Scalar> ChannelScale<T> {
    pub fn forward(&self, x: &Array3<T>) -> Array3<T> {
        let mut y = x.clone();
        for (c, mut plane) in y.outer_iter_mut().enumerate() {
            let g = self.gamma[c];
            plane.mapv_inplace(|v| v * g);
        }
        y
    }

    pub fn backward(&self, gy: &Array3<T>) -> Array3<T> {
        self.forward(gy)
    }
}

/// Convnext block: 7x7 depthwise conv, channel layernorm, pointwise expand,
/// GELU, pointwise reduce, channel scale, residual add.
#[derive(Debug, Clone)]
pub struct ConvNextBlock<T> {
    pub dwconv: Conv2d<T>,
    pub norm: LayerNorm2d<T>,
    pub pwconv1: Conv2d<T>,
    pub pwconv2: Conv2d<T>,
    pub scale: ChannelScale<T>,
}

#[derive(Debug, Clone)]
pub struct ConvNextBlockCtx<T> {
    dw: ConvCtx<T>,
    n: LayerNorm2dCtx<T>,
    p1: ConvCtx<T>,
    g: GeluCtx3<T>,
    p2: ConvCtx<T>,
}

impl<T: Scalar> ConvNextBlock<T> {
    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, ConvNextBlockCtx<T>) {
        let (h, dw) = self.dwconv.forward(x);
        let (h, n) = self.norm.forward(&h);
        let (h, p1) = self.pwconv1.forward(&h);
        let (h, g) = gelu3_forward(&h);
        let (h, p2) = self.pwconv2.forward(&h);
        let mut y = self.scale.forward(&h);
        y += x;
        (y, ConvNextBlockCtx { dw, n, p1, g, p2 })
    }

    pub fn backward(&self, ctx: &ConvNextBlockCtx<T>, gy: &Array3<T>) -> Array3<T> {
        let g = self.scale.backward(gy);
        let g = self.pwconv2.backward(&ctx.p2, &g);
        let g = gelu3_backward(&ctx.g, &g);
        let g = self.pwconv1.backward(&ctx.p1, &g);
        let g = self.norm.backward(&ctx.n, &g);
        let mut gx = self.dwconv.backward(&ctx.dw, &g);
        gx += gy;
        gx
    }
}

/// Convnext downsampling: channel layernorm then strided 2x2 conv.
#[derive(Debug, Clone)]
pub struct ConvNextDown<T> {
    pub norm: LayerNorm2d<T>,
    pub conv: Conv2d<T>,
}

#[derive(Debug, Clone)]
pub struct ConvNextDownCtx<T> {
    n: LayerNorm2dCtx<T>,
    c: ConvCtx<T>,
}

impl<T: Scalar> ConvNextDown<T> {
    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, ConvNextDownCtx<T>) {
        let (h, n) = self.norm.forward(x);
        let (y, c) = self.conv.forward(&h);
        (y, ConvNextDownCtx { n, c })
    }

    pub fn backward(&self, ctx: &ConvNextDownCtx<T>, gy: &Array3<T>) -> Array3<T> {
        let g = self.conv.backward(&ctx.c, gy);
        self.norm.backward(&ctx.n, &g)
    }
}
