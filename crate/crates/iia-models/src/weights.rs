//! Parameter enumeration and tensor archive IO.
//!
//! Every parameter of a model is reachable through a named slot; the walk
//! order and names are stable, so an archive written by [`save_cnn`] or
//! [`save_vit`] loads back into a freshly built model of the same
//! architecture. Archives use the safetensors container format.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array4, ArrayD, ArrayViewD};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{ModelError, Result};
use crate::layers::{BatchNorm2d, Conv2d, Layer, LayerNorm, Linear};
use crate::models::staged::{CnnHead, StagedCnn};
use crate::models::vit::{VitBlock, VitModel};
use crate::scalar::Scalar;

/// A mutable handle on one named parameter tensor.
pub enum Slot<'a, T> {
    A1(&'a mut Arc<Array1<T>>),
    A2(&'a mut Arc<Array2<T>>),
    A4(&'a mut Arc<Array4<T>>),
}

impl<T: Scalar> Slot<'_, T> {
    pub fn view(&self) -> ArrayViewD<'_, T> {
        match self {
            Slot::A1(a) => a.view().into_dyn(),
            Slot::A2(a) => a.view().into_dyn(),
            Slot::A4(a) => a.view().into_dyn(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.view().shape().to_vec()
    }

    /// Replace the tensor, requiring an exact shape match.
    pub fn set(&mut self, value: ArrayD<T>) -> Result<()> {
        let want = self.shape();
        if value.shape() != want.as_slice() {
            return Err(ModelError::shape("parameter slot", &want, value.shape()));
        }
        match self {
            Slot::A1(a) => {
                **a = Arc::new(value.into_dimensionality().expect("rank checked"));
            }
            Slot::A2(a) => {
                **a = Arc::new(value.into_dimensionality().expect("rank checked"));
            }
            Slot::A4(a) => {
                **a = Arc::new(value.into_dimensionality().expect("rank checked"));
            }
        }
        Ok(())
    }

    /// Mutate the tensor in place (copy on write if it is shared).
    pub fn update(&mut self, f: impl FnOnce(ndarray::ArrayViewMutD<'_, T>)) {
        match self {
            Slot::A1(a) => f(Arc::make_mut(a).view_mut().into_dyn()),
            Slot::A2(a) => f(Arc::make_mut(a).view_mut().into_dyn()),
            Slot::A4(a) => f(Arc::make_mut(a).view_mut().into_dyn()),
        }
    }
}

pub type SlotVisitor<'v, T> = dyn FnMut(String, Slot<'_, T>) + 'v;

fn visit_conv<T: Scalar>(prefix: &str, c: &mut Conv2d<T>, f: &mut SlotVisitor<'_, T>) {
    f(format!("{prefix}.weight"), Slot::A4(&mut c.weight));
    if let Some(b) = &mut c.bias {
        f(format!("{prefix}.bias"), Slot::A1(b));
    }
}

fn visit_bn<T: Scalar>(prefix: &str, b: &mut BatchNorm2d<T>, f: &mut SlotVisitor<'_, T>) {
    f(format!("{prefix}.weight"), Slot::A1(&mut b.weight));
    f(format!("{prefix}.bias"), Slot::A1(&mut b.bias));
    f(
        format!("{prefix}.running_mean"),
        Slot::A1(&mut b.running_mean),
    );
    f(
        format!("{prefix}.running_var"),
        Slot::A1(&mut b.running_var),
    );
}

fn visit_ln<T: Scalar>(prefix: &str, l: &mut LayerNorm<T>, f: &mut SlotVisitor<'_, T>) {
    f(format!("{prefix}.weight"), Slot::A1(&mut l.weight));
    f(format!("{prefix}.bias"), Slot::A1(&mut l.bias));
}

fn visit_linear<T: Scalar>(prefix: &str, l: &mut Linear<T>, f: &mut SlotVisitor<'_, T>) {
    f(format!("{prefix}.weight"), Slot::A2(&mut l.weight));
    if let Some(b) = &mut l.bias {
        f(format!("{prefix}.bias"), Slot::A1(b));
    }
}

fn visit_layer<T: Scalar>(prefix: &str, layer: &mut Layer<T>, f: &mut SlotVisitor<'_, T>) {
    match layer {
        Layer::Conv(c) => visit_conv(prefix, c, f),
        Layer::Bn(b) => visit_bn(prefix, b, f),
        Layer::Relu(_) | Layer::MaxPool(_) | Layer::AvgPool(_) => {}
        Layer::Ln2d(l) => visit_ln(prefix, &mut l.inner, f),
        Layer::Bottleneck(b) => {
            visit_conv(&format!("{prefix}.conv1"), &mut b.conv1, f);
            visit_bn(&format!("{prefix}.bn1"), &mut b.bn1, f);
            visit_conv(&format!("{prefix}.conv2"), &mut b.conv2, f);
            visit_bn(&format!("{prefix}.bn2"), &mut b.bn2, f);
            visit_conv(&format!("{prefix}.conv3"), &mut b.conv3, f);
            visit_bn(&format!("{prefix}.bn3"), &mut b.bn3, f);
            if let Some((dc, dn)) = &mut b.downsample {
                visit_conv(&format!("{prefix}.downsample.0"), dc, f);
                visit_bn(&format!("{prefix}.downsample.1"), dn, f);
            }
        }
        Layer::DenseBlock(d) => {
            for (i, dl) in d.layers.iter_mut().enumerate() {
                let p = format!("{prefix}.denselayer{}", i + 1);
                visit_bn(&format!("{p}.norm1"), &mut dl.norm1, f);
                visit_conv(&format!("{p}.conv1"), &mut dl.conv1, f);
                visit_bn(&format!("{p}.norm2"), &mut dl.norm2, f);
                visit_conv(&format!("{p}.conv2"), &mut dl.conv2, f);
            }
        }
        Layer::Transition(t) => {
            visit_bn(&format!("{prefix}.norm"), &mut t.norm, f);
            visit_conv(&format!("{prefix}.conv"), &mut t.conv, f);
        }
        Layer::ConvNextBlock(b) => {
            visit_conv(&format!("{prefix}.dwconv"), &mut b.dwconv, f);
            visit_ln(&format!("{prefix}.norm"), &mut b.norm.inner, f);
            visit_conv(&format!("{prefix}.pwconv1"), &mut b.pwconv1, f);
            visit_conv(&format!("{prefix}.pwconv2"), &mut b.pwconv2, f);
            f(format!("{prefix}.gamma"), Slot::A1(&mut b.scale.gamma));
        }
        Layer::ConvNextDown(d) => {
            visit_ln(&format!("{prefix}.norm"), &mut d.norm.inner, f);
            visit_conv(&format!("{prefix}.conv"), &mut d.conv, f);
        }
    }
}

/// Walk every parameter of a convnet in a stable order.
pub fn visit_cnn<T: Scalar>(m: &mut StagedCnn<T>, f: &mut SlotVisitor<'_, T>) {
    for (s, stage) in m.stages.iter_mut().enumerate() {
        for (i, layer) in stage.iter_mut().enumerate() {
            visit_layer(&format!("stage{s}.{i}"), layer, f);
        }
    }
    match &mut m.head {
        CnnHead::GapLinear { fc } => visit_linear("head.fc", fc, f),
        CnnHead::GapNormLinear { norm, fc } => {
            visit_ln("head.norm", norm, f);
            visit_linear("head.fc", fc, f);
        }
        CnnHead::FlattenMlp { fc1, fc2 } => {
            visit_linear("head.fc1", fc1, f);
            visit_linear("head.fc2", fc2, f);
        }
    }
}

fn visit_vit_block<T: Scalar>(prefix: &str, b: &mut VitBlock<T>, f: &mut SlotVisitor<'_, T>) {
    visit_ln(&format!("{prefix}.ln1"), &mut b.ln1, f);
    visit_linear(&format!("{prefix}.qkv"), &mut b.qkv, f);
    visit_linear(&format!("{prefix}.proj"), &mut b.proj, f);
    visit_ln(&format!("{prefix}.ln2"), &mut b.ln2, f);
    visit_linear(&format!("{prefix}.fc1"), &mut b.fc1, f);
    visit_linear(&format!("{prefix}.fc2"), &mut b.fc2, f);
}

/// Walk every parameter of a transformer in a stable order.
pub fn visit_vit<T: Scalar>(m: &mut VitModel<T>, f: &mut SlotVisitor<'_, T>) {
    visit_conv("embed.proj", &mut m.embed.proj, f);
    f("embed.cls".into(), Slot::A1(&mut m.embed.cls));
    f("embed.pos".into(), Slot::A2(&mut m.embed.pos));
    for (i, b) in m.blocks.iter_mut().enumerate() {
        visit_vit_block(&format!("blocks.{i}"), b, f);
    }
    visit_ln("norm", &mut m.norm, f);
    visit_linear("head", &mut m.head, f);
}

fn dtype_for<T: Scalar>() -> Dtype {
    if std::mem::size_of::<T>() == 4 {
        Dtype::F32
    } else {
        Dtype::F64
    }
}

fn tensor_bytes<T: Scalar>(view: &ArrayViewD<'_, T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(view.len() * std::mem::size_of::<T>());
    if std::mem::size_of::<T>() == 4 {
        for &v in view.iter() {
            out.extend_from_slice(&(Scalar::to_f64(v) as f32).to_le_bytes());
        }
    } else {
        for &v in view.iter() {
            out.extend_from_slice(&Scalar::to_f64(v).to_le_bytes());
        }
    }
    out
}

fn tensor_from<T: Scalar>(name: &str, tv: &TensorView<'_>) -> Result<ArrayD<T>> {
    let data = tv.data();
    let values: Vec<T> = match tv.dtype() {
        Dtype::F32 => data
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect(),
        Dtype::F64 => data
            .chunks_exact(8)
            .map(|c| {
                T::from_f64(f64::from_le_bytes([
                    c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                ]))
            })
            .collect(),
        other => {
            return Err(ModelError::Weights(format!(
                "tensor '{name}' has unsupported dtype {other:?}"
            )))
        }
    };
    ArrayD::from_shape_vec(tv.shape().to_vec(), values)
        .map_err(|e| ModelError::Weights(format!("tensor '{name}': {e}")))
}

struct OwnedTensor {
    dtype: Dtype,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl safetensors::View for &OwnedTensor {
    fn dtype(&self) -> Dtype {
        self.dtype
    }

    fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn data(&self) -> std::borrow::Cow<'_, [u8]> {
        std::borrow::Cow::Borrowed(&self.bytes)
    }

    fn data_len(&self) -> usize {
        self.bytes.len()
    }
}

fn save_with<T: Scalar, M>(
    model: &mut M,
    walk: fn(&mut M, &mut SlotVisitor<'_, T>),
    path: &Path,
) -> Result<()> {
    let mut tensors: BTreeMap<String, OwnedTensor> = BTreeMap::new();
    walk(model, &mut |name, slot| {
        let view = slot.view();
        tensors.insert(
            name,
            OwnedTensor {
                dtype: dtype_for::<T>(),
                shape: view.shape().to_vec(),
                bytes: tensor_bytes(&view),
            },
        );
    });
    safetensors::serialize_to_file(tensors.iter().map(|(k, v)| (k.clone(), v)), None, path)
        .map_err(|e| ModelError::Weights(format!("{}: {e}", path.display())))
}

fn load_with<T: Scalar, M>(
    model: &mut M,
    walk: fn(&mut M, &mut SlotVisitor<'_, T>),
    path: &Path,
) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let st = SafeTensors::deserialize(&bytes)
        .map_err(|e| ModelError::Weights(format!("{}: {e}", path.display())))?;
    let mut unused: std::collections::BTreeSet<String> =
        st.names().into_iter().map(|s| s.to_string()).collect();
    let mut failure: Option<ModelError> = None;
    walk(model, &mut |name, mut slot| {
        if failure.is_some() {
            return;
        }
        let outcome = st
            .tensor(&name)
            .map_err(|_| ModelError::Weights(format!("archive is missing tensor '{name}'")))
            .and_then(|tv| tensor_from::<T>(&name, &tv))
            .and_then(|arr| slot.set(arr));
        if let Err(e) = outcome {
            failure = Some(e);
            return;
        }
        unused.remove(&name);
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if !unused.is_empty() {
        let extras: Vec<String> = unused.into_iter().take(5).collect();
        return Err(ModelError::Weights(format!(
            "archive has tensors this model does not use, e.g. {}",
            extras.join(", ")
        )));
    }
    Ok(())
}

pub fn save_cnn<T: Scalar>(model: &mut StagedCnn<T>, path: &Path) -> Result<()> {
    save_with(model, visit_cnn, path)
}

pub fn load_cnn<T: Scalar>(model: &mut StagedCnn<T>, path: &Path) -> Result<()> {
    load_with(model, visit_cnn, path)
}

pub fn save_vit<T: Scalar>(model: &mut VitModel<T>, path: &Path) -> Result<()> {
    save_with(model, visit_vit, path)
}

pub fn load_vit<T: Scalar>(model: &mut VitModel<T>, path: &Path) -> Result<()> {
    load_with(model, visit_vit, path)
}

/// Number of learned parameters (running statistics excluded).
pub fn learned_param_count<T: Scalar, M>(
    model: &mut M,
    walk: fn(&mut M, &mut SlotVisitor<'_, T>),
) -> usize {
    let mut n = 0usize;
    walk(model, &mut |name, slot| {
        if !name.ends_with("running_mean") && !name.ends_with("running_var") {
            n += slot.view().len();
        }
    });
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::TapModel;
    use crate::models::toy::{toy_cnn, toy_vit};
    use ndarray::ArrayD;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("iia-weights-{name}-{}", std::process::id()));
        p
    }

    #[test]
    fn cnn_roundtrip_restores_exact_logits() {
        let mut src: StagedCnn<f32> = toy_cnn(1);
        let path = tmp("cnn");
        save_cnn(&mut src, &path).unwrap();

        let mut dst: StagedCnn<f32> = toy_cnn(2);
        load_cnn(&mut dst, &path).unwrap();
        std::fs::remove_file(&path).ok();

        let x = ArrayD::from_elem(ndarray::IxDyn(&[3, 32, 32]), 0.3f32);
        let mut ra = src.begin(x.clone()).unwrap();
        let mut rb = dst.begin(x).unwrap();
        assert_eq!(
            src.finish(&mut ra).unwrap(),
            dst.finish(&mut rb).unwrap()
        );
    }

    #[test]
    fn vit_roundtrip_restores_exact_logits() {
        let mut src: VitModel<f32> = toy_vit(1);
        let path = tmp("vit");
        save_vit(&mut src, &path).unwrap();

        let mut dst: VitModel<f32> = toy_vit(2);
        load_vit(&mut dst, &path).unwrap();
        std::fs::remove_file(&path).ok();

        let x = ArrayD::from_elem(ndarray::IxDyn(&[3, 16, 16]), 0.3f32);
        let mut ra = src.begin(x.clone()).unwrap();
        let mut rb = dst.begin(x).unwrap();
        assert_eq!(
            src.finish(&mut ra).unwrap(),
            dst.finish(&mut rb).unwrap()
        );
    }

    #[test]
    fn widening_load_is_exact() {
        let mut src: StagedCnn<f32> = toy_cnn(5);
        let path = tmp("widen");
        save_cnn(&mut src, &path).unwrap();
        let mut dst: StagedCnn<f64> = toy_cnn(6);
        load_cnn(&mut dst, &path).unwrap();
        std::fs::remove_file(&path).ok();
        let (crate::layers::Layer::Conv(a), crate::layers::Layer::Conv(b)) =
            (&src.stages[0][0], &dst.stages[0][0])
        else {
            panic!("stage 0 starts with a conv");
        };
        for (x, y) in a.weight.iter().zip(b.weight.iter()) {
            assert_eq!(*x as f64, *y);
        }
    }

    #[test]
    fn mismatched_archive_is_rejected() {
        let mut vit: VitModel<f32> = toy_vit(1);
        let path = tmp("mismatch");
        save_vit(&mut vit, &path).unwrap();
        let mut cnn: StagedCnn<f32> = toy_cnn(1);
        assert!(load_cnn(&mut cnn, &path).is_err());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn full_size_models_have_the_reference_parameter_counts() {
        let mut resnet: StagedCnn<f32> = crate::models::resnet::resnet101(0, (224, 224));
        assert_eq!(learned_param_count(&mut resnet, visit_cnn), 44_549_160);

        let mut densenet: StagedCnn<f32> = crate::models::densenet::densenet201(0, (224, 224));
        assert_eq!(learned_param_count(&mut densenet, visit_cnn), 20_013_928);

        let mut convnext: StagedCnn<f32> = crate::models::convnext::convnext_base(0, (224, 224));
        assert_eq!(learned_param_count(&mut convnext, visit_cnn), 88_591_464);

        let mut rng = crate::models::seeded_rng("vit_base_patch16", 0);
        let mut vit_b: VitModel<f32> =
            crate::models::vit::build_vit(&mut rng, 224, 16, 768, 12, 12, 1000, "vit_base_patch16");
        assert_eq!(learned_param_count(&mut vit_b, visit_vit), 86_567_656);

        let mut rng = crate::models::seeded_rng("vit_small_patch16", 0);
        let mut vit_s: VitModel<f32> = crate::models::vit::build_vit(
            &mut rng,
            224,
            16,
            384,
            6,
            12,
            1000,
            "vit_small_patch16",
        );
        assert_eq!(learned_param_count(&mut vit_s, visit_vit), 22_050_664);
    }
}
