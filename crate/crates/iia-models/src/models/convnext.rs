//! Convnext, base configuration: dims 128/256/512/1024, depths 3/3/27/3.
//!
//! Taps are the four stage outputs; the patchify stem is folded into the
//! first stage.

use std::sync::Arc;

use ndarray::Array1;
use rand_chacha::ChaCha8Rng;

use crate::init;
use crate::instrument::{ArchKind, ModelMeta, Preproc};
use crate::layers::{
    ChannelScale, Conv2d, ConvNextBlock, ConvNextDown, Layer, LayerNorm, LayerNorm2d, Linear,
};
use crate::models::staged::{CnnHead, StagedCnn};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-6;
const LAYER_SCALE_INIT: f64 = 1e-6;

fn conv<T: Scalar>(
    rng: &mut ChaCha8Rng,
    ci: usize,
    co: usize,
    k: usize,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Conv2d<T> {
    Conv2d::new(
        init::he_conv(rng, co, ci / groups, k, k),
        Some(init::zeros1(co)),
        (stride, stride),
        (padding, padding),
        groups,
    )
}

fn block<T: Scalar>(rng: &mut ChaCha8Rng, dim: usize) -> ConvNextBlock<T> {
    ConvNextBlock {
        dwconv: conv(rng, dim, dim, 7, 1, 3, dim),
        norm: LayerNorm2d::identity(dim, LN_EPS),
        pwconv1: conv(rng, dim, 4 * dim, 1, 1, 0, 1),
        pwconv2: conv(rng, 4 * dim, dim, 1, 1, 0, 1),
        scale: ChannelScale {
            gamma: Arc::new(Array1::from_elem(dim, T::from_f64(LAYER_SCALE_INIT))),
        },
    }
}

pub fn convnext_base<T: Scalar>(seed: u64, input_hw: (usize, usize)) -> StagedCnn<T> {
    let mut rng = crate::models::seeded_rng("convnext_base", seed);
    let dims = [128usize, 256, 512, 1024];
    let depths = [3usize, 3, 27, 3];

    let mut stages = Vec::with_capacity(4);
    for s in 0..4 {
        let mut stage: Vec<Layer<T>> = Vec::new();
        if s == 0 {
            stage.push(Layer::Conv(conv(&mut rng, 3, dims[0], 4, 4, 0, 1)));
            stage.push(Layer::Ln2d(LayerNorm2d::identity(dims[0], LN_EPS)));
        } else {
            stage.push(Layer::ConvNextDown(ConvNextDown {
                norm: LayerNorm2d::identity(dims[s - 1], LN_EPS),
                conv: conv(&mut rng, dims[s - 1], dims[s], 2, 2, 0, 1),
            }));
        }
        for _ in 0..depths[s] {
            stage.push(Layer::ConvNextBlock(block(&mut rng, dims[s])));
        }
        stages.push(stage);
    }

    let head = CnnHead::GapNormLinear {
        norm: LayerNorm::identity(dims[3], LN_EPS),
        fc: Linear::new(
            init::he_linear(&mut rng, 1000, dims[3]),
            Some(init::zeros1(1000)),
        ),
    };
    StagedCnn {
        meta: ModelMeta {
            id: "convnext_base".into(),
            arch: ArchKind::Cnn,
            layer_count: 4,
            input_hw,
            in_channels: 3,
            num_classes: 1000,
            token_grid: None,
            heads: None,
            preproc: Preproc::imagenet(),
        },
        stages,
        head,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::TapModel;
    use ndarray::ArrayD;

    #[test]
    fn stage_dims_follow_the_width_plan() {
        let model: StagedCnn<f32> = convnext_base(1, (64, 64));
        let x = ArrayD::from_elem(ndarray::IxDyn(&[3, 64, 64]), 0.1f32);
        let mut run = model.begin(x).unwrap();
        let u1 = model.advance(&mut run, 1).unwrap();
        assert_eq!(u1.shape(), &[128, 16, 16]);
        model.inject(&mut run, 1, u1).unwrap();
        let u4 = model.advance(&mut run, 4).unwrap();
        assert_eq!(u4.shape(), &[1024, 2, 2]);
        model.inject(&mut run, 4, u4).unwrap();
        let logits = model.finish(&mut run).unwrap();
        assert_eq!(logits.len(), 1000);
    }
}
