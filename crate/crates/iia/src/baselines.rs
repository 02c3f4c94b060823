//! Single-path attribution baselines: integrated gradients, Grad-CAM, and
//! attention rollout.

use iia_models::{ArchKind, GradRequest, Scalar, TapModel};
use ndarray::{ArrayD, Axis, Ix2};

use crate::attribution::{interpolate, AttributionMap, ReferencePolicy};
use crate::error::{AttributionError, Result};
use crate::integrands::{attention_rollout, cls_row_to_patch_map, RolloutCombine, RolloutState};
use crate::plan::ClassSelector;
use crate::resize::bilinear_resize;
use crate::tensor::{argmax, to_f64, to_f64_3};

/// A per-pixel signed attribution tensor plus its reduced heatmap.
#[derive(Debug, Clone)]
pub struct PixelAttribution {
    /// Signed attributions, one per input element (C, H, W).
    pub tensor: ArrayD<f64>,
    /// Channel-averaged heatmap at the input resolution.
    pub map: AttributionMap,
}

fn resolve_class<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    selector: ClassSelector,
) -> Result<usize> {
    match selector {
        ClassSelector::Target(c) => {
            let classes = model.meta().num_classes;
            if c >= classes {
                return Err(AttributionError::InvalidArgument(format!(
                    "class {c} out of range for {classes} classes"
                )));
            }
            Ok(c)
        }
        ClassSelector::Predicted => {
            let mut run = model.begin(image.clone())?;
            let logits = model.finish(&mut run)?;
            Ok(argmax(&logits))
        }
    }
}

fn check_input<T: Scalar, M: TapModel<T>>(model: &M, image: &ArrayD<T>) -> Result<()> {
    let meta = model.meta();
    let expected = [meta.in_channels, meta.input_hw.0, meta.input_hw.1];
    if image.shape() != expected {
        return Err(AttributionError::ShapeMismatch {
            context: "input image".into(),
            expected: expected.to_vec(),
            got: image.shape().to_vec(),
        });
    }
    Ok(())
}

/// Integrated gradients along the straight path from a reference to the
/// image, using the right-endpoint grid `a = k/n, k = 1..n`.
pub fn integrated_gradients<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    reference: &ReferencePolicy,
    n: usize,
    selector: ClassSelector,
) -> Result<PixelAttribution> {
    if n == 0 {
        return Err(AttributionError::InvalidArgument(
            "integrated gradients needs at least one step".into(),
        ));
    }
    check_input(model, image)?;
    let class = resolve_class(model, image, selector)?;
    let r = reference.materialize(image)?;

    let mut grad_sum: Option<ArrayD<f64>> = None;
    for k in 1..=n {
        let a = k as f64 / n as f64;
        let v = interpolate(image, &r, a, 1)?;
        let mut run = model.begin(v)?;
        model.finish(&mut run)?;
        let g = model
            .backward(&run, class, &GradRequest::at(0))?
            .at_layer
            .ok_or_else(|| {
                AttributionError::Model(iia_models::ModelError::Protocol(
                    "backward returned no input gradient".into(),
                ))
            })?;
        let g64 = to_f64(&g);
        match &mut grad_sum {
            None => grad_sum = Some(g64),
            Some(s) => *s += &g64,
        }
    }
    let mean_grad = grad_sum.expect("n >= 1").mapv(|g| g / n as f64);
    let tensor = (&to_f64(image) - &to_f64(&r)) * &mean_grad;
    if tensor.iter().any(|x| !x.is_finite()) {
        return Err(AttributionError::NonFinite {
            what: "integrated gradients".into(),
            layer: 0,
            coefficients: vec![],
        });
    }

    let meta = model.meta();
    let raw = tensor
        .mean_axis(Axis(0))
        .expect("input has channels")
        .into_dimensionality::<Ix2>()
        .unwrap();
    let values = bilinear_resize(&raw, meta.input_hw.0, meta.input_hw.1);
    Ok(PixelAttribution {
        tensor,
        map: AttributionMap {
            values,
            class_index: class,
            method_tag: format!("ig[n={n}]"),
            raw_pre_resize: Some(raw),
        },
    })
}

/// The completeness gap `|sum(attributions) - (f(x) - f(r))|` for an
/// integrated-gradients result. Exact in the step limit; exactly zero at any
/// step count when the logit is linear in the input.
pub fn completeness_gap<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    reference: &ReferencePolicy,
    attribution: &PixelAttribution,
) -> Result<f64> {
    let class = attribution.map.class_index;
    let r = reference.materialize(image)?;
    let logit_at = |x: ArrayD<T>| -> Result<f64> {
        let mut run = model.begin(x)?;
        let logits = model.finish(&mut run)?;
        Ok(Scalar::to_f64(logits[class]))
    };
    let fx = logit_at(image.clone())?;
    let fr = logit_at(r)?;
    Ok((attribution.tensor.sum() - (fx - fr)).abs())
}

/// Grad-CAM at the last tap: per-channel gradient averages weight the
/// activation channels, negative evidence is clipped, and the result is
/// upsampled to the input resolution.
pub fn grad_cam<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    selector: ClassSelector,
) -> Result<AttributionMap> {
    let meta = model.meta();
    if meta.arch != ArchKind::Cnn {
        return Err(AttributionError::InvalidArgument(
            "grad-cam reads convolutional feature maps; use rollout methods on transformers"
                .into(),
        ));
    }
    check_input(model, image)?;
    let class = resolve_class(model, image, selector)?;
    let l = meta.layer_count;

    let mut run = model.begin(image.clone())?;
    let u = model.advance(&mut run, l)?;
    model.finish(&mut run)?;
    let g = model
        .backward(&run, class, &GradRequest::at(l))?
        .at_layer
        .ok_or_else(|| {
            AttributionError::Model(iia_models::ModelError::Protocol(
                "backward returned no feature gradient".into(),
            ))
        })?;

    let a64 = to_f64(&u);
    let g64 = to_f64(&g);
    if a64.ndim() != 3 {
        return Err(AttributionError::InvalidArgument(
            "grad-cam expects a (C, H, W) feature map at the last tap".into(),
        ));
    }
    let (h, w) = (a64.shape()[1], a64.shape()[2]);
    let mut cam = ndarray::Array2::<f64>::zeros((h, w));
    for (ach, gch) in a64.axis_iter(Axis(0)).zip(g64.axis_iter(Axis(0))) {
        let alpha = gch.mean().expect("non-empty feature map");
        cam.zip_mut_with(&ach, |c, &a| *c += alpha * a);
    }
    cam.mapv_inplace(|v| v.max(0.0));

    let values = bilinear_resize(&cam, meta.input_hw.0, meta.input_hw.1);
    Ok(AttributionMap {
        values,
        class_index: class,
        method_tag: format!("gradcam[l={l}]"),
        raw_pre_resize: Some(cam),
    })
}

/// Gradient-free attention rollout across all blocks of a transformer.
pub fn attention_rollout_map<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    combine: RolloutCombine,
    selector: ClassSelector,
) -> Result<AttributionMap> {
    let meta = model.meta();
    if meta.arch != ArchKind::Vit {
        return Err(AttributionError::InvalidArgument(
            "attention rollout needs a transformer model".into(),
        ));
    }
    check_input(model, image)?;
    let class = resolve_class(model, image, selector)?;
    let (gh, gw) = meta.token_grid.ok_or_else(|| {
        AttributionError::InvalidArgument("transformer metadata is missing the token grid".into())
    })?;

    let mut run = model.begin(image.clone())?;
    model.finish(&mut run)?;
    let attns = model.attentions(&run, meta.layer_count)?;
    let state = RolloutState {
        attentions: attns.iter().map(to_f64_3).collect::<Result<Vec<_>>>()?,
        gradients: Vec::new(),
    };
    let roll = attention_rollout(&state, combine)?;
    let raw = cls_row_to_patch_map(&roll, gh, gw)?;
    let values = bilinear_resize(&raw, meta.input_hw.0, meta.input_hw.1);
    Ok(AttributionMap {
        values,
        class_index: class,
        method_tag: format!("rollout[{}]", combine.name()),
        raw_pre_resize: Some(raw),
    })
}
