//! Layer zoo: primitives, composite blocks, and the dispatch enum that stage
//! pipelines are built from.

pub mod act;
pub mod blocks;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;

pub use act::{
    gelu3_backward, gelu3_forward, softmax_rows_backward, softmax_rows_inplace, Gelu, GeluCtx,
    GeluCtx3, Relu, ReluCtx,
};
pub use blocks::{
    Bottleneck, BottleneckCtx, ChannelScale, ConvNextBlock, ConvNextBlockCtx, ConvNextDown,
    ConvNextDownCtx, DenseBlock, DenseBlockCtx, DenseLayer, DenseLayerCtx, Transition,
    TransitionCtx,
};
pub use conv::{Conv2d, ConvCtx};
pub use linear::{Linear, LinearCtx1, LinearCtx2};
pub use norm::{BatchNorm2d, LayerNorm, LayerNorm2d, LayerNorm2dCtx, LayerNormCtx};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, AvgPool2d, AvgPoolCtx, MaxPool2d, MaxPoolCtx,
};

use ndarray::Array3;

use crate::scalar::Scalar;

/// One step of a convnet stage pipeline.
#[derive(Debug, Clone)]
pub enum Layer<T: Scalar> {
    Conv(Conv2d<T>),
    Bn(BatchNorm2d<T>),
    Relu(Relu),
    MaxPool(MaxPool2d),
    AvgPool(AvgPool2d),
    Ln2d(LayerNorm2d<T>),
    Bottleneck(Bottleneck<T>),
    DenseBlock(DenseBlock<T>),
    Transition(Transition<T>),
    ConvNextBlock(ConvNextBlock<T>),
    ConvNextDown(ConvNextDown<T>),
}

/// Saved forward state of the matching [`Layer`] variant.
#[derive(Debug, Clone)]
pub enum LayerCtx<T: Scalar> {
    Conv(ConvCtx<T>),
    Bn,
    Relu(ReluCtx<T>),
    MaxPool(MaxPoolCtx),
    AvgPool(AvgPoolCtx),
    Ln2d(LayerNorm2dCtx<T>),
    Bottleneck(BottleneckCtx<T>),
    DenseBlock(DenseBlockCtx<T>),
    Transition(TransitionCtx<T>),
    ConvNextBlock(ConvNextBlockCtx<T>),
    ConvNextDown(ConvNextDownCtx<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, LayerCtx<T>) {
        match self {
            Layer::Conv(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCtx::Conv(c))
            }
            Layer::Bn(l) => (l.forward(x), LayerCtx::Bn),
            Layer::Relu(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCtx::Relu(c))
            }
            Layer::MaxPool(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCtx::MaxPool(c))
            }
            Layer::AvgPool(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCtx::AvgPool(c))
            }
            Layer::Ln2d(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCtx::Ln2d(c))
            }
            Layer::Bottleneck(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCtx::Bottleneck(c))
            }
            Layer::DenseBlock(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCtx::DenseBlock(c))
            }
            Layer::Transition(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCtx::Transition(c))
            }
            Layer::ConvNextBlock(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCtx::ConvNextBlock(c))
            }
            Layer::ConvNextDown(l) => {
                let (y, c) = l.forward(x);
                (y, LayerCtx::ConvNextDown(c))
            }
        }
    }

    pub fn backward(&self, ctx: &LayerCtx<T>, gy: &Array3<T>) -> Array3<T> {
        match (self, ctx) {
            (Layer::Conv(l), LayerCtx::Conv(c)) => l.backward(c, gy),
            (Layer::Bn(l), LayerCtx::Bn) => l.backward(gy),
            (Layer::Relu(l), LayerCtx::Relu(c)) => l.backward(c, gy),
            (Layer::MaxPool(l), LayerCtx::MaxPool(c)) => l.backward(c, gy),
            (Layer::AvgPool(l), LayerCtx::AvgPool(c)) => l.backward(c, gy),
            (Layer::Ln2d(l), LayerCtx::Ln2d(c)) => l.backward(c, gy),
            (Layer::Bottleneck(l), LayerCtx::Bottleneck(c)) => l.backward(c, gy),
            (Layer::DenseBlock(l), LayerCtx::DenseBlock(c)) => l.backward(c, gy),
            (Layer::Transition(l), LayerCtx::Transition(c)) => l.backward(c, gy),
            (Layer::ConvNextBlock(l), LayerCtx::ConvNextBlock(c)) => l.backward(c, gy),
            (Layer::ConvNextDown(l), LayerCtx::ConvNextDown(c)) => l.backward(c, gy),
            _ => panic!("layer/ctx variant mismatch"),
        }
    }

    /// Backward that also emits parameter gradients under `prefix`, for the
    /// layer kinds training loops use. Parameter-free layers pass through.
    pub fn backward_collect(
        &self,
        ctx: &LayerCtx<T>,
        gy: &Array3<T>,
        prefix: &str,
        out: &mut Vec<(String, ndarray::ArrayD<T>)>,
    ) -> Array3<T> {
        match (self, ctx) {
            (Layer::Conv(l), LayerCtx::Conv(c)) => {
                let (gw, gb) = l.grad_params(c, gy);
                out.push((format!("{prefix}.weight"), gw.into_dyn()));
                if l.bias.is_some() {
                    out.push((format!("{prefix}.bias"), gb.into_dyn()));
                }
                l.backward(c, gy)
            }
            (Layer::Relu(..), _) | (Layer::MaxPool(..), _) | (Layer::AvgPool(..), _) => {
                self.backward(ctx, gy)
            }
            _ => unimplemented!("training is not wired for this layer kind"),
        }
    }
}
