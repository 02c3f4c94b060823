//! Densely connected network, 201-layer configuration: growth 32, block
//! sizes 6/12/48/32.
//!
//! Taps are the three transition outputs plus the final normalized feature
//! map, so every tap sits at a spatial resolution change or the head input.

use rand_chacha::ChaCha8Rng;

use crate::init;
use crate::instrument::{ArchKind, ModelMeta, Preproc};
use crate::layers::{
    AvgPool2d, BatchNorm2d, Conv2d, DenseBlock, DenseLayer, Layer, Linear, MaxPool2d, Relu,
    Transition,
};
use crate::models::staged::{CnnHead, StagedCnn};
use crate::scalar::Scalar;

const BN_EPS: f64 = 1e-5;
const GROWTH: usize = 32;
const BN_SIZE: usize = 4;

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

fn dense_block<T: Scalar>(rng: &mut ChaCha8Rng, cin: usize, layers: usize) -> DenseBlock<T> {
    let mut out = Vec::with_capacity(layers);
    for i in 0..layers {
        let c = cin + i * GROWTH;
        out.push(DenseLayer {
            norm1: BatchNorm2d::identity(c, BN_EPS),
            conv1: conv(rng, c, BN_SIZE * GROWTH, 1, 1, 0),
            norm2: BatchNorm2d::identity(BN_SIZE * GROWTH, BN_EPS),
            conv2: conv(rng, BN_SIZE * GROWTH, GROWTH, 3, 1, 1),
        });
    }
    DenseBlock { layers: out }
}

fn transition<T: Scalar>(rng: &mut ChaCha8Rng, cin: usize) -> Transition<T> {
    Transition {
        norm: BatchNorm2d::identity(cin, BN_EPS),
        conv: conv(rng, cin, cin / 2, 1, 1, 0),
        pool: AvgPool2d {
            kernel: (2, 2),
            stride: (2, 2),
        },
    }
}

pub fn densenet201<T: Scalar>(seed: u64, input_hw: (usize, usize)) -> StagedCnn<T> {
    let mut rng = crate::models::seeded_rng("densenet201", seed);
    let block_sizes = [6usize, 12, 48, 32];

    let mut c = 64;
    let mut stage0: Vec<Layer<T>> = vec![
        Layer::Conv(conv(&mut rng, 3, c, 7, 2, 3)),
        Layer::Bn(BatchNorm2d::identity(c, BN_EPS)),
        Layer::Relu(Relu),
        Layer::MaxPool(MaxPool2d {
            kernel: (3, 3),
            stride: (2, 2),
            padding: (1, 1),
        }),
    ];
    stage0.push(Layer::DenseBlock(dense_block(&mut rng, c, block_sizes[0])));
    c += block_sizes[0] * GROWTH;
    stage0.push(Layer::Transition(transition(&mut rng, c)));
    c /= 2;

    let mut stages = vec![stage0];
    for &blocks in &block_sizes[1..3] {
        let mut stage = vec![Layer::DenseBlock(dense_block(&mut rng, c, blocks))];
        c += blocks * GROWTH;
        stage.push(Layer::Transition(transition(&mut rng, c)));
        c /= 2;
        stages.push(stage);
    }

    let mut last = vec![Layer::DenseBlock(dense_block(&mut rng, c, block_sizes[3]))];
    c += block_sizes[3] * GROWTH;
    last.push(Layer::Bn(BatchNorm2d::identity(c, BN_EPS)));
    last.push(Layer::Relu(Relu));
    stages.push(last);

    let fc = Linear::new(
        init::he_linear(&mut rng, 1000, c),
        Some(init::zeros1(1000)),
    );
    StagedCnn {
        meta: ModelMeta {
            id: "densenet201".into(),
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
        head: CnnHead::GapLinear { fc },
    }
}
