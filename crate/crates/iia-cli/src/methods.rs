//! Turn a method id into an attribution map, and synthesize deterministic
//! inputs for runs that need no image files.

use ndarray::{Array3, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iia::{
    attention_rollout_map, grad_cam, integrated_gradients, iterated_attribution, AttributionMap,
    ClassSelector, Integrand, InterpolationPlan, ReferencePlan, ReferencePolicy, RolloutCombine,
};
use iia_models::{ArchKind, ModelMeta, Scalar, TapModel};

use crate::config::MethodId;

/// Compute one attribution map. Preset methods run the nested-interpolation
/// engine with the architecture's conventional integrand and references;
/// baseline methods dispatch to their own implementations.
pub fn compute_map<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    method: MethodId,
    n: usize,
    selector: ClassSelector,
    max_batch: usize,
) -> iia::Result<AttributionMap> {
    let meta = model.meta();
    match method {
        MethodId::Ig => {
            integrated_gradients(model, image, &ReferencePolicy::Zero, n, selector)
                .map(|attribution| attribution.map)
        }
        MethodId::GradCam => grad_cam(model, image, selector),
        MethodId::Rollout => {
            attention_rollout_map(model, image, RolloutCombine::default(), selector)
        }
        _ => {
            let preset = method
                .preset()
                .expect("non-preset methods are handled above");
            let mut plan = InterpolationPlan::preset(preset, meta.layer_count, selector)?;
            plan.n = n;
            plan.validate()?;
            let integrand = match meta.arch {
                ArchKind::Cnn => Integrand::ActivationGradientProduct,
                ArchKind::Vit => Integrand::GradientRollout(RolloutCombine::default()),
            };
            log::info!("{}: plan {}", method.name(), plan.describe(integrand.name()));
            let refs = ReferencePlan::default_for(meta.arch);
            iterated_attribution(model, image, &plan, integrand, &refs, max_batch)
        }
    }
}

/// A deterministic synthetic input: a few seeded soft blobs on a mid-gray
/// background, standardized with the model's own preprocessing constants.
pub fn synthetic_image<T: Scalar>(meta: &ModelMeta, seed: u64) -> ArrayD<T> {
    let (h, w) = meta.input_hw;
    let channels = meta.in_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    struct Blob {
        cy: f64,
        cx: f64,
        sigma: f64,
        weights: Vec<f64>,
    }
    let blobs: Vec<Blob> = (0..3)
        .map(|_| Blob {
            cy: rng.random_range(0.2..0.8) * h as f64,
            cx: rng.random_range(0.2..0.8) * w as f64,
            sigma: rng.random_range(0.08..0.2) * h.min(w) as f64,
            weights: (0..channels).map(|_| rng.random_range(0.0..0.8)).collect(),
        })
        .collect();

    let mut raw = Array3::<f64>::from_elem((channels, h, w), 0.2);
    for blob in &blobs {
        for y in 0..h {
            for x in 0..w {
                let dy = y as f64 - blob.cy;
                let dx = x as f64 - blob.cx;
                let g = (-(dy * dy + dx * dx) / (2.0 * blob.sigma * blob.sigma)).exp();
                for c in 0..channels {
                    raw[(c, y, x)] += blob.weights[c] * g;
                }
            }
        }
    }

    let preproc = &meta.preproc;
    let mut out = Array3::<T>::zeros((channels, h, w));
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                let v = (raw[(c, y, x)].clamp(0.0, 1.0) - preproc.mean[c]) / preproc.std[c];
                out[(c, y, x)] = T::from_f64(v);
            }
        }
    }
    out.into_dyn()
}

#[cfg(test)]
mod tests {
    use super::*;
    use iia_models::{build_model, BuildOptions};

    #[test]
    fn synthetic_inputs_are_seed_deterministic_and_shaped() {
        let model = build_model("toy_cnn", &BuildOptions::default()).unwrap();
        let a: ArrayD<f32> = synthetic_image(model.meta(), 3);
        let b: ArrayD<f32> = synthetic_image(model.meta(), 3);
        let c: ArrayD<f32> = synthetic_image(model.meta(), 4);
        assert_eq!(a.shape(), [3, 32, 32]);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn every_method_produces_a_map_on_its_architecture() {
        let cnn = build_model("toy_cnn", &BuildOptions::default()).unwrap();
        let vit = build_model("toy_vit", &BuildOptions::default()).unwrap();
        let cnn_img: ArrayD<f32> = synthetic_image(cnn.meta(), 0);
        let vit_img: ArrayD<f32> = synthetic_image(vit.meta(), 0);

        for method in [
            MethodId::Iia2,
            MethodId::Iia3,
            MethodId::Img,
            MethodId::Act,
            MethodId::Iia2Lm1,
            MethodId::Ig,
            MethodId::GradCam,
        ] {
            let map = compute_map(&cnn, &cnn_img, method, 3, ClassSelector::Predicted, 8)
                .unwrap_or_else(|e| panic!("{} on cnn: {e}", method.name()));
            assert_eq!(map.values.dim(), (32, 32));
        }
        for method in [MethodId::Iia2, MethodId::Img, MethodId::Rollout] {
            let map = compute_map(&vit, &vit_img, method, 2, ClassSelector::Predicted, 8)
                .unwrap_or_else(|e| panic!("{} on vit: {e}", method.name()));
            assert_eq!(map.values.dim(), (16, 16));
        }
    }
}
