//! Nested-interpolation attribution engine.
//!
//! The engine walks a model once per grid point of an [`InterpolationPlan`]:
//! outer loops interpolate activations at layers below the target layer `l`,
//! the innermost loop (present only when `b[l] == 1`) interpolates the target
//! activation itself. Every grid point contributes one integrand evaluation
//! `(u^l - r^l) ∘ q^l`, accumulated in double precision and scaled by
//! `1 / n^beta` at the end.

use std::collections::BTreeMap;

use iia_models::{ArchKind, GradRequest, Scalar, TapModel};
use ndarray::{Array2, ArrayD, Axis, Ix2, Zip};

use crate::error::{AttributionError, Result};
use crate::integrands::{
    attention_rollout, cls_row_to_patch_map, gradient_rollout, Integrand, RolloutState,
};
use crate::plan::{schedule_batches, ClassSelector, InterpolationPlan};
use crate::resize::bilinear_resize;
use crate::tensor::{argmax, to_f64, to_f64_3};

/// How the reference activation `r^l` is produced from a captured `u^l`.
#[derive(Debug, Clone)]
pub enum ReferencePolicy {
    /// Per-slice minimum along the leading axis, broadcast back to the full
    /// shape. For a `(C, H, W)` activation this is the per-channel minimum;
    /// for `(heads, T, T)` attention it is the per-head minimum.
    ChannelMin,
    /// All zeros.
    Zero,
    /// A fixed tensor; its shape must match the captured activation.
    Custom(ArrayD<f64>),
}

impl ReferencePolicy {
    /// Build the concrete reference tensor for a captured activation. The
    /// result is recomputed from the current `u` on every call, so data-driven
    /// policies track the upstream interpolation state.
    pub fn materialize<T: Scalar>(&self, u: &ArrayD<T>) -> Result<ArrayD<T>> {
        match self {
            ReferencePolicy::Zero => Ok(ArrayD::zeros(u.raw_dim())),
            ReferencePolicy::Custom(r) => {
                if r.shape() != u.shape() {
                    return Err(AttributionError::ShapeMismatch {
                        context: "custom reference".into(),
                        expected: u.shape().to_vec(),
                        got: r.shape().to_vec(),
                    });
                }
                Ok(r.mapv(T::from_f64))
            }
            ReferencePolicy::ChannelMin => {
                if u.ndim() == 0 || u.is_empty() {
                    return Err(AttributionError::InvalidArgument(
                        "channel-min reference needs a non-empty tensor with at least one axis"
                            .into(),
                    ));
                }
                let mut r = ArrayD::zeros(u.raw_dim());
                for (mut slot, slice) in r.axis_iter_mut(Axis(0)).zip(u.axis_iter(Axis(0))) {
                    let mut m = T::infinity();
                    for &v in slice.iter() {
                        if v < m {
                            m = v;
                        }
                    }
                    slot.fill(m);
                }
                Ok(r)
            }
        }
    }
}

/// Per-layer reference assignment: a default policy plus optional overrides.
#[derive(Debug, Clone)]
pub struct ReferencePlan {
    default: ReferencePolicy,
    overrides: BTreeMap<usize, ReferencePolicy>,
}

impl ReferencePlan {
    /// One policy for every layer.
    pub fn uniform(policy: ReferencePolicy) -> Self {
        ReferencePlan {
            default: policy,
            overrides: BTreeMap::new(),
        }
    }

    /// The conventional choice per architecture: channel-min references for
    /// convolutional activations, zero references for attention tensors.
    pub fn default_for(arch: ArchKind) -> Self {
        match arch {
            ArchKind::Cnn => ReferencePlan::uniform(ReferencePolicy::ChannelMin),
            ArchKind::Vit => ReferencePlan::uniform(ReferencePolicy::Zero),
        }
    }

    /// Override the policy at one layer.
    pub fn with_layer(mut self, layer: usize, policy: ReferencePolicy) -> Self {
        self.overrides.insert(layer, policy);
        self
    }

    pub fn for_layer(&self, layer: usize) -> &ReferencePolicy {
        self.overrides.get(&layer).unwrap_or(&self.default)
    }
}

/// Interpolate between a reference and a captured activation:
/// `v = r + a * (u - r)` when the layer participates (`b_flag == 1`),
/// the unmodified `u` otherwise. `a == 1` returns `u` bit-exactly.
pub fn interpolate<T: Scalar>(
    u: &ArrayD<T>,
    r: &ArrayD<T>,
    a: f64,
    b_flag: u8,
) -> Result<ArrayD<T>> {
    if u.shape() != r.shape() {
        return Err(AttributionError::ShapeMismatch {
            context: "interpolation endpoints".into(),
            expected: u.shape().to_vec(),
            got: r.shape().to_vec(),
        });
    }
    if b_flag == 0 || a == 1.0 {
        return Ok(u.clone());
    }
    let af = T::from_f64(a);
    let mut v = u.clone();
    Zip::from(&mut v).and(r).for_each(|out, &rv| {
        *out = rv + af * (*out - rv);
    });
    Ok(v)
}

/// A finished attribution: a heatmap at the model's input resolution plus the
/// pre-resize reduction it came from.
#[derive(Debug, Clone)]
pub struct AttributionMap {
    /// Heatmap resized to the input height and width.
    pub values: Array2<f64>,
    /// Class the attribution explains.
    pub class_index: usize,
    /// Human-readable method descriptor, e.g. `iia[b=101,n=10,l=2,act_grad]`.
    pub method_tag: String,
    /// The spatial map before bilinear resize, when the reduction produced one
    /// at a different resolution.
    pub raw_pre_resize: Option<Array2<f64>>,
}

/// Reduce an accumulated tensor to a 2D spatial map: 3D tensors are averaged
/// over the leading axis, 2D tensors pass through, then both are resized.
pub fn reduce_to_map(tensor: &ArrayD<f64>, out_h: usize, out_w: usize) -> Result<Array2<f64>> {
    let spatial: Array2<f64> = match tensor.ndim() {
        2 => tensor.clone().into_dimensionality::<Ix2>().unwrap(),
        3 => tensor
            .mean_axis(Axis(0))
            .ok_or_else(|| {
                AttributionError::InvalidArgument("cannot reduce an empty leading axis".into())
            })?
            .into_dimensionality::<Ix2>()
            .unwrap(),
        d => {
            return Err(AttributionError::InvalidArgument(format!(
                "cannot reduce a {d}D tensor to a spatial map"
            )))
        }
    };
    Ok(bilinear_resize(&spatial, out_h, out_w))
}

struct Engine<'a, T: Scalar, M: TapModel<T>> {
    model: &'a M,
    plan: &'a InterpolationPlan,
    integrand: Integrand,
    refs: &'a ReferencePlan,
    class: usize,
    /// Active layers strictly below the target layer, ascending.
    outer: Vec<usize>,
    /// Whether the target layer itself is interpolated.
    target_active: bool,
    /// Current grid coefficients (outer layers first, target last), kept for
    /// error context.
    coeffs: Vec<f64>,
    chunk_sizes: Vec<usize>,
    chunk_index: usize,
    chunk_left: usize,
    partial: Option<ArrayD<f64>>,
    total: Option<ArrayD<f64>>,
    _scalar: std::marker::PhantomData<fn() -> T>,
}

impl<'a, T: Scalar, M: TapModel<T>> Engine<'a, T, M> {
    fn descend(&mut self, level: usize, run: M::Run) -> Result<()> {
        if level == self.outer.len() {
            return self.at_target(run);
        }
        let layer = self.outer[level];
        let mut run = run;
        let u = self.model.advance(&mut run, layer)?;
        let r = self.refs.for_layer(layer).materialize(&u)?;
        for k in 1..=self.plan.n {
            let a = k as f64 / self.plan.n as f64;
            self.coeffs[level] = a;
            let v = interpolate(&u, &r, a, 1)?;
            let mut next = run.clone();
            self.model.inject(&mut next, layer, v)?;
            self.descend(level + 1, next)?;
        }
        Ok(())
    }

    fn at_target(&mut self, run: M::Run) -> Result<()> {
        let l = self.plan.l;
        let mut run = run;
        let u = self.model.advance(&mut run, l)?;
        let r = self.refs.for_layer(l).materialize(&u)?;
        let diff = &to_f64(&u) - &to_f64(&r);
        if self.target_active {
            for k in 1..=self.plan.n {
                let a = k as f64 / self.plan.n as f64;
                *self.coeffs.last_mut().unwrap() = a;
                let v = interpolate(&u, &r, a, 1)?;
                let mut point = run.clone();
                self.model.inject(&mut point, l, v.clone())?;
                self.eval_point(point, &diff, &v)?;
            }
        } else {
            let v = u.clone();
            self.eval_point(run, &diff, &v)?;
        }
        Ok(())
    }

    /// Finish the run, pull the integrand's gradient signal, and accumulate
    /// one `(u - r) ∘ q` term.
    fn eval_point(&mut self, mut run: M::Run, diff: &ArrayD<f64>, v_used: &ArrayD<T>) -> Result<()> {
        let l = self.plan.l;
        self.model.finish(&mut run)?;
        let q: ArrayD<f64> = match self.integrand {
            Integrand::PlainGradient | Integrand::ActivationGradientProduct => {
                let bundle = self
                    .model
                    .backward(&run, self.class, &GradRequest::at(l))?;
                let grad = bundle.at_layer.ok_or_else(|| {
                    AttributionError::Model(iia_models::ModelError::Protocol(format!(
                        "backward returned no gradient at layer {l}"
                    )))
                })?;
                let g = to_f64(&grad);
                match self.integrand {
                    Integrand::PlainGradient => g,
                    _ => &to_f64(v_used) * &g,
                }
            }
            Integrand::GradientRollout(combine) => {
                if l == 0 {
                    return Err(AttributionError::InvalidArgument(
                        "rollout integrands need a target layer of at least 1".into(),
                    ));
                }
                let want = GradRequest {
                    at_layer: None,
                    attentions_upto: Some(l),
                };
                let bundle = self.model.backward(&run, self.class, &want)?;
                let attns = self.model.attentions(&run, l)?;
                let state = RolloutState {
                    attentions: attns
                        .iter()
                        .map(to_f64_3)
                        .collect::<Result<Vec<_>>>()?,
                    gradients: bundle
                        .attentions
                        .iter()
                        .map(to_f64_3)
                        .collect::<Result<Vec<_>>>()?,
                };
                let roll = gradient_rollout(&state, combine)?;
                broadcast_rollout(&roll, diff)?
            }
            Integrand::AttentionRollout(combine) => {
                if l == 0 {
                    return Err(AttributionError::InvalidArgument(
                        "rollout integrands need a target layer of at least 1".into(),
                    ));
                }
                let attns = self.model.attentions(&run, l)?;
                let state = RolloutState {
                    attentions: attns
                        .iter()
                        .map(to_f64_3)
                        .collect::<Result<Vec<_>>>()?,
                    gradients: Vec::new(),
                };
                let roll = attention_rollout(&state, combine)?;
                broadcast_rollout(&roll, diff)?
            }
        };
        if q.shape() != diff.shape() {
            return Err(AttributionError::ShapeMismatch {
                context: format!("integrand output at layer {l}"),
                expected: diff.shape().to_vec(),
                got: q.shape().to_vec(),
            });
        }
        let term = diff * &q;
        if term.iter().any(|x| !x.is_finite()) {
            return Err(AttributionError::NonFinite {
                what: "integrand term".into(),
                layer: l,
                coefficients: self.coeffs.clone(),
            });
        }
        self.accumulate(term);
        Ok(())
    }

    /// Chunked accumulation: terms sum into a per-chunk partial, which folds
    /// into the grand total at chunk boundaries. The fold order (and hence the
    /// bit pattern) is fixed by the batch schedule.
    fn accumulate(&mut self, term: ArrayD<f64>) {
        match &mut self.partial {
            None => self.partial = Some(term),
            Some(p) => *p += &term,
        }
        self.chunk_left -= 1;
        if self.chunk_left == 0 {
            let done = self.partial.take().unwrap();
            match &mut self.total {
                None => self.total = Some(done),
                Some(t) => *t += &done,
            }
            self.chunk_index += 1;
            if self.chunk_index < self.chunk_sizes.len() {
                self.chunk_left = self.chunk_sizes[self.chunk_index];
            }
        }
    }
}

fn broadcast_rollout(roll: &Array2<f64>, like: &ArrayD<f64>) -> Result<ArrayD<f64>> {
    if like.ndim() != 3 || like.shape()[1] != roll.nrows() || like.shape()[2] != roll.ncols() {
        return Err(AttributionError::ShapeMismatch {
            context: "rollout broadcast".into(),
            expected: like.shape().to_vec(),
            got: roll.shape().to_vec(),
        });
    }
    let heads = like.shape()[0];
    let mut q = ArrayD::zeros(like.raw_dim());
    for mut head in q.axis_iter_mut(Axis(0)) {
        head.assign(roll);
    }
    debug_assert_eq!(q.shape()[0], heads);
    Ok(q)
}

/// Run the nested-interpolation attribution for one image.
///
/// `max_batch` bounds how many grid points share one accumulation chunk; it
/// changes the floating-point reduction order slightly but not the method.
pub fn iterated_attribution<T: Scalar, M: TapModel<T>>(
    model: &M,
    image: &ArrayD<T>,
    plan: &InterpolationPlan,
    integrand: Integrand,
    refs: &ReferencePlan,
    max_batch: usize,
) -> Result<AttributionMap> {
    plan.validate()?;
    let meta = model.meta();
    if plan.b.len() != meta.layer_count + 1 {
        return Err(AttributionError::Plan(format!(
            "plan covers {} layers but the model exposes {}",
            plan.b.len().saturating_sub(1),
            meta.layer_count
        )));
    }
    let expected = [meta.in_channels, meta.input_hw.0, meta.input_hw.1];
    if image.shape() != expected {
        return Err(AttributionError::ShapeMismatch {
            context: "input image".into(),
            expected: expected.to_vec(),
            got: image.shape().to_vec(),
        });
    }
    if integrand.needs_attentions() && meta.arch != ArchKind::Vit {
        return Err(AttributionError::InvalidArgument(format!(
            "integrand {} needs attention tensors, which {} models do not expose",
            integrand.name(),
            match meta.arch {
                ArchKind::Cnn => "convolutional",
                ArchKind::Vit => "transformer",
            }
        )));
    }

    let class = match plan.class_selector {
        ClassSelector::Target(c) => {
            if c >= meta.num_classes {
                return Err(AttributionError::InvalidArgument(format!(
                    "class {c} out of range for {} classes",
                    meta.num_classes
                )));
            }
            c
        }
        ClassSelector::Predicted => {
            let mut run = model.begin(image.clone())?;
            let logits = model.finish(&mut run)?;
            argmax(&logits)
        }
    };

    let schedule = schedule_batches(plan, max_batch)?;
    let active = plan.active_layers();
    let target_active = plan.b[plan.l] == 1;
    let outer: Vec<usize> = active.iter().copied().filter(|&a| a < plan.l).collect();
    let beta = plan.beta();

    let mut engine = Engine {
        model,
        plan,
        integrand,
        refs,
        class,
        coeffs: vec![0.0; beta as usize],
        outer,
        target_active,
        chunk_left: schedule.sizes[0],
        chunk_sizes: schedule.sizes,
        chunk_index: 0,
        partial: None,
        total: None,
        _scalar: std::marker::PhantomData,
    };
    engine.descend(0, model.begin(image.clone())?)?;
    debug_assert_eq!(engine.chunk_index, engine.chunk_sizes.len());

    let mut total = engine.total.expect("grid is never empty");
    let scale = 1.0 / (plan.n as f64).powi(beta as i32);
    total.mapv_inplace(|x| x * scale);

    let (out_h, out_w) = meta.input_hw;
    let (raw, values) = match meta.arch {
        ArchKind::Cnn => {
            let raw = match total.ndim() {
                3 => total.mean_axis(Axis(0)).unwrap().into_dimensionality::<Ix2>().unwrap(),
                2 => total.into_dimensionality::<Ix2>().unwrap(),
                d => {
                    return Err(AttributionError::InvalidArgument(format!(
                        "cannot reduce a {d}D accumulator to a spatial map"
                    )))
                }
            };
            let values = bilinear_resize(&raw, out_h, out_w);
            (raw, values)
        }
        ArchKind::Vit => {
            if plan.l == 0 {
                // Input-level attribution on a transformer reduces like an image tensor.
                let raw = total.mean_axis(Axis(0)).unwrap().into_dimensionality::<Ix2>().unwrap();
                let values = bilinear_resize(&raw, out_h, out_w);
                (raw, values)
            } else {
                let (gh, gw) = meta.token_grid.ok_or_else(|| {
                    AttributionError::InvalidArgument(
                        "transformer metadata is missing the token grid".into(),
                    )
                })?;
                let token_map = total
                    .mean_axis(Axis(0))
                    .unwrap()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                let raw = cls_row_to_patch_map(&token_map, gh, gw)?;
                let values = bilinear_resize(&raw, out_h, out_w);
                (raw, values)
            }
        }
    };

    Ok(AttributionMap {
        values,
        class_index: class,
        method_tag: plan.describe(integrand.name()),
        raw_pre_resize: Some(raw),
    })
}
