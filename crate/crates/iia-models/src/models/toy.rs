//! Small seeded models for fast tests and pipeline demos.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::init;
use crate::instrument::{ArchKind, ModelMeta, Preproc};
use crate::layers::{Conv2d, Layer, Linear, MaxPool2d, Relu};
use crate::models::staged::{CnnHead, StagedCnn};
use crate::models::vit::VitModel;
use crate::scalar::Scalar;

fn conv<T: Scalar>(
    rng: &mut ChaCha8Rng,
    ci: usize,
    co: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Layer<T> {
    Layer::Conv(Conv2d::new(
        init::he_conv(rng, co, ci, k, k),
        Some(init::zeros1(co)),
        (stride, stride),
        (padding, padding),
        1,
    ))
}

fn pool2<T: Scalar>() -> Layer<T> {
    Layer::MaxPool(MaxPool2d {
        kernel: (2, 2),
        stride: (2, 2),
        padding: (0, 0),
    })
}

/// Three-stage relu convnet on 32x32 rgb input, 10 classes.
pub fn toy_cnn<T: Scalar>(seed: u64) -> StagedCnn<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stages = vec![
        vec![conv(&mut rng, 3, 8, 3, 1, 1), Layer::Relu(Relu), pool2()],
        vec![conv(&mut rng, 8, 16, 3, 1, 1), Layer::Relu(Relu), pool2()],
        vec![conv(&mut rng, 16, 32, 3, 1, 1), Layer::Relu(Relu)],
    ];
    let fc = Linear::new(init::he_linear(&mut rng, 10, 32), Some(init::zeros1(10)));
    StagedCnn {
        meta: ModelMeta {
            id: "toy_cnn".into(),
            arch: ArchKind::Cnn,
            layer_count: 3,
            input_hw: (32, 32),
            in_channels: 3,
            num_classes: 10,
            token_grid: None,
            heads: None,
            preproc: Preproc::unit(3),
        },
        stages,
        head: CnnHead::GapLinear { fc },
    }
}

/// LeNet-shaped trainable convnet: two conv/pool stages and an mlp head on
/// 1x32x32 input, 10 classes. Parameter names, deepest last:
/// stage0.0, stage1.0, head.fc1, head.fc2.
pub fn sanity_cnn<T: Scalar>(seed: u64) -> StagedCnn<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stages = vec![
        vec![conv(&mut rng, 1, 6, 5, 1, 0), Layer::Relu(Relu), pool2()],
        vec![conv(&mut rng, 6, 16, 5, 1, 0), Layer::Relu(Relu), pool2()],
    ];
    let fc1 = Linear::new(init::he_linear(&mut rng, 120, 400), Some(init::zeros1(120)));
    let fc2 = Linear::new(init::he_linear(&mut rng, 10, 120), Some(init::zeros1(10)));
    StagedCnn {
        meta: ModelMeta {
            id: "sanity_cnn".into(),
            arch: ArchKind::Cnn,
            layer_count: 2,
            input_hw: (32, 32),
            in_channels: 1,
            num_classes: 10,
            token_grid: None,
            heads: None,
            preproc: Preproc::unit(1),
        },
        stages,
        head: CnnHead::FlattenMlp { fc1, fc2 },
    }
}

/// Three-block transformer on 16x16 input with 4x4 patches, 7 classes.
pub fn toy_vit<T: Scalar>(seed: u64) -> VitModel<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    crate::models::vit::build_vit(&mut rng, 16, 4, 32, 2, 3, 7, "toy_vit")
}
