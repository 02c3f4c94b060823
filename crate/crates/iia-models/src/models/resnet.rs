//! Bottleneck residual network, 101-layer configuration.
//!
//! Taps are the four residual stage outputs; the stem is folded into the
//! first stage so tap 0 stays the raw input.

use rand_chacha::ChaCha8Rng;

use crate::init;
use crate::instrument::{ArchKind, ModelMeta, Preproc};
use crate::layers::{BatchNorm2d, Bottleneck, Conv2d, Layer, Linear, MaxPool2d, Relu};
use crate::models::staged::{CnnHead, StagedCnn};
use crate::scalar::Scalar;

const BN_EPS: f64 = 1e-5;

fn conv<T: Scalar>(
    rng: &mut ChaCha8Rng,
    ci: usize,
    co: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Conv2d<T> {
    Conv2d::new(
        init::he_conv(rng, co, ci, k, k),
        None,
        (stride, stride),
        (padding, padding),
        1,
    )
}

fn bottleneck<T: Scalar>(
    rng: &mut ChaCha8Rng,
    cin: usize,
    mid: usize,
    cout: usize,
    stride: usize,
) -> Bottleneck<T> {
    let downsample = if stride != 1 || cin != cout {
        Some((
            conv(rng, cin, cout, 1, stride, 0),
            BatchNorm2d::identity(cout, BN_EPS),
        ))
    } else {
        None
    };
    Bottleneck {
        conv1: conv(rng, cin, mid, 1, 1, 0),
        bn1: BatchNorm2d::identity(mid, BN_EPS),
        conv2: conv(rng, mid, mid, 3, stride, 1),
        bn2: BatchNorm2d::identity(mid, BN_EPS),
        conv3: conv(rng, mid, cout, 1, 1, 0),
        bn3: BatchNorm2d::identity(cout, BN_EPS),
        downsample,
    }
}

fn residual_stage<T: Scalar>(
    rng: &mut ChaCha8Rng,
    blocks: usize,
    cin: usize,
    mid: usize,
    cout: usize,
    stride: usize,
) -> Vec<Layer<T>> {
    let mut out = Vec::with_capacity(blocks);
    out.push(Layer::Bottleneck(bottleneck(rng, cin, mid, cout, stride)));
    for _ in 1..blocks {
        out.push(Layer::Bottleneck(bottleneck(rng, cout, mid, cout, 1)));
    }
    out
}

pub fn resnet101<T: Scalar>(seed: u64, input_hw: (usize, usize)) -> StagedCnn<T> {
    let mut rng = crate::models::seeded_rng("resnet101", seed);
    let mut stage0: Vec<Layer<T>> = vec![
        Layer::Conv(conv(&mut rng, 3, 64, 7, 2, 3)),
        Layer::Bn(BatchNorm2d::identity(64, BN_EPS)),
        Layer::Relu(Relu),
        Layer::MaxPool(MaxPool2d {
            kernel: (3, 3),
            stride: (2, 2),
            padding: (1, 1),
        }),
    ];
    stage0.extend(residual_stage(&mut rng, 3, 64, 64, 256, 1));
    let stage1 = residual_stage(&mut rng, 4, 256, 128, 512, 2);
    let stage2 = residual_stage(&mut rng, 23, 512, 256, 1024, 2);
    let stage3 = residual_stage(&mut rng, 3, 1024, 512, 2048, 2);
    let fc = Linear::new(
        init::he_linear(&mut rng, 1000, 2048),
        Some(init::zeros1(1000)),
    );
    StagedCnn {
        meta: ModelMeta {
            id: "resnet101".into(),
            arch: ArchKind::Cnn,
            layer_count: 4,
            input_hw,
            in_channels: 3,
            num_classes: 1000,
            token_grid: None,
            heads: None,
            preproc: Preproc::imagenet(),
        },
        stages: vec![stage0, stage1, stage2, stage3],
        head: CnnHead::GapLinear { fc },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::TapModel;
    use ndarray::ArrayD;

    #[test]
    fn stage_shapes_follow_the_stride_plan() {
        let model: StagedCnn<f32> = resnet101(1, (64, 64));
        let x = ArrayD::from_elem(ndarray::IxDyn(&[3, 64, 64]), 0.1f32);
        let mut run = model.begin(x).unwrap();
        let u1 = model.advance(&mut run, 1).unwrap();
        assert_eq!(u1.shape(), &[256, 16, 16]);
        model.inject(&mut run, 1, u1).unwrap();
        let u3 = model.advance(&mut run, 3).unwrap();
        assert_eq!(u3.shape(), &[1024, 4, 4]);
        model.inject(&mut run, 3, u3).unwrap();
        let logits = model.finish(&mut run).unwrap();
        assert_eq!(logits.len(), 1000);
    }

    #[test]
    fn block_counts_match_the_101_layer_recipe() {
        let model: StagedCnn<f32> = resnet101(1, (224, 224));
        let counts: Vec<usize> = model.stages.iter().map(|s| s.len()).collect();
        assert_eq!(counts, vec![4 + 3, 4, 23, 3]);
    }
}
