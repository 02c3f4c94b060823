//! Model registry: build any known architecture from an id, a seed, and an
//! optional weights file.

pub mod convnext;
pub mod densenet;
pub mod resnet;
pub mod staged;
pub mod toy;
pub mod vit;

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ndarray::{Array1, ArrayD};

use crate::error::{ModelError, Result};
use crate::instrument::{GradBundle, GradRequest, ModelMeta, TapModel};

pub use staged::{CnnHead, CnnRun, StagedCnn};
pub use vit::{VitModel, VitRun};

/// Stream the architecture name into the seed so two models built with the
/// same seed do not share parameter values.
pub(crate) fn seeded_rng(id: &str, seed: u64) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(h ^ seed)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightInit {
    /// Parameters drawn from the model's seeded rng.
    Seeded,
    /// Parameters loaded from a tensor archive written by this crate.
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub seed: u64,
    /// Override the native input resolution. Convnets accept any size of at
    /// least 32; transformers require a patch multiple. Fixed-size toys
    /// reject overrides.
    pub input_hw: Option<(usize, usize)>,
    pub weights: WeightInit,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            seed: 0,
            input_hw: None,
            weights: WeightInit::Seeded,
        }
    }
}

/// Any registry model, single precision.
#[derive(Clone)]
pub enum AnyModel {
    Cnn(StagedCnn<f32>),
    Vit(VitModel<f32>),
}

/// Run state for [`AnyModel`], dispatching to the underlying run type.
#[derive(Clone)]
pub enum AnyRun {
    Cnn(CnnRun<f32>),
    Vit(VitRun<f32>),
}

impl TapModel<f32> for AnyModel {
    type Run = AnyRun;

    fn meta(&self) -> &ModelMeta {
        match self {
            AnyModel::Cnn(m) => &m.meta,
            AnyModel::Vit(m) => &m.meta,
        }
    }

    fn begin(&self, x: ArrayD<f32>) -> Result<Self::Run> {
        match self {
            AnyModel::Cnn(m) => Ok(AnyRun::Cnn(m.begin(x)?)),
            AnyModel::Vit(m) => Ok(AnyRun::Vit(m.begin(x)?)),
        }
    }

    fn advance(&self, run: &mut Self::Run, layer: usize) -> Result<ArrayD<f32>> {
        match (self, run) {
            (AnyModel::Cnn(m), AnyRun::Cnn(r)) => m.advance(r, layer),
            (AnyModel::Vit(m), AnyRun::Vit(r)) => m.advance(r, layer),
            _ => Err(ModelError::Protocol("run belongs to a different model".into())),
        }
    }

    fn inject(&self, run: &mut Self::Run, layer: usize, v: ArrayD<f32>) -> Result<()> {
        match (self, run) {
            (AnyModel::Cnn(m), AnyRun::Cnn(r)) => m.inject(r, layer, v),
            (AnyModel::Vit(m), AnyRun::Vit(r)) => m.inject(r, layer, v),
            _ => Err(ModelError::Protocol("run belongs to a different model".into())),
        }
    }

    fn finish(&self, run: &mut Self::Run) -> Result<Array1<f32>> {
        match (self, run) {
            (AnyModel::Cnn(m), AnyRun::Cnn(r)) => m.finish(r),
            (AnyModel::Vit(m), AnyRun::Vit(r)) => m.finish(r),
            _ => Err(ModelError::Protocol("run belongs to a different model".into())),
        }
    }

    fn backward(&self, run: &Self::Run, class: usize, want: &GradRequest) -> Result<GradBundle<f32>> {
        match (self, run) {
            (AnyModel::Cnn(m), AnyRun::Cnn(r)) => m.backward(r, class, want),
            (AnyModel::Vit(m), AnyRun::Vit(r)) => m.backward(r, class, want),
            _ => Err(ModelError::Protocol("run belongs to a different model".into())),
        }
    }

    fn attentions(&self, run: &Self::Run, upto: usize) -> Result<Vec<ArrayD<f32>>> {
        match (self, run) {
            (AnyModel::Cnn(m), AnyRun::Cnn(r)) => m.attentions(r, upto),
            (AnyModel::Vit(m), AnyRun::Vit(r)) => m.attentions(r, upto),
            _ => Err(ModelError::Protocol("run belongs to a different model".into())),
        }
    }
}

pub fn known_model_ids() -> &'static [&'static str] {
    &[
        "resnet101",
        "densenet201",
        "convnext_base",
        "vit_base_patch16",
        "vit_small_patch16",
        "toy_cnn",
        "toy_vit",
        "sanity_cnn",
    ]
}

fn check_cnn_hw(id: &str, hw: (usize, usize)) -> Result<(usize, usize)> {
    if hw.0 < 32 || hw.1 < 32 {
        return Err(ModelError::Protocol(format!(
            "{id} needs an input of at least 32x32, got {}x{}",
            hw.0, hw.1
        )));
    }
    Ok(hw)
}

fn reject_hw_override(id: &str, hw: Option<(usize, usize)>) -> Result<()> {
    if hw.is_some() {
        return Err(ModelError::Protocol(format!(
            "{id} has a fixed input size"
        )));
    }
    Ok(())
}

pub fn build_model(id: &str, opts: &BuildOptions) -> Result<AnyModel> {
    let hw224 = opts.input_hw.unwrap_or((224, 224));
    let mut model = match id {
        "resnet101" => AnyModel::Cnn(resnet::resnet101(opts.seed, check_cnn_hw(id, hw224)?)),
        "densenet201" => AnyModel::Cnn(densenet::densenet201(opts.seed, check_cnn_hw(id, hw224)?)),
        "convnext_base" => {
            AnyModel::Cnn(convnext::convnext_base(opts.seed, check_cnn_hw(id, hw224)?))
        }
        "vit_base_patch16" | "vit_small_patch16" => {
            let (h, w) = hw224;
            if h != w || h % 16 != 0 {
                return Err(ModelError::Protocol(format!(
                    "{id} needs a square input divisible by 16, got {h}x{w}"
                )));
            }
            let mut rng = seeded_rng(id, opts.seed);
            let m = if id == "vit_base_patch16" {
                vit::build_vit(&mut rng, h, 16, 768, 12, 12, 1000, id)
            } else {
                vit::build_vit(&mut rng, h, 16, 384, 6, 12, 1000, id)
            };
            AnyModel::Vit(m)
        }
        "toy_cnn" => {
            reject_hw_override(id, opts.input_hw)?;
            AnyModel::Cnn(toy::toy_cnn(opts.seed))
        }
        "toy_vit" => {
            reject_hw_override(id, opts.input_hw)?;
            AnyModel::Vit(toy::toy_vit(opts.seed))
        }
        "sanity_cnn" => {
            reject_hw_override(id, opts.input_hw)?;
            AnyModel::Cnn(toy::sanity_cnn(opts.seed))
        }
        _ => return Err(ModelError::UnknownModel(id.into())),
    };
    if let WeightInit::File(path) = &opts.weights {
        match &mut model {
            AnyModel::Cnn(m) => crate::weights::load_cnn(m, path)?,
            AnyModel::Vit(m) => crate::weights::load_vit(m, path)?,
        }
    }
    Ok(model)
}
