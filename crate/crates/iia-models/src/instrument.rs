//! The tap/inject/backward contract every instrumented model implements.
//!
//! A model exposes `layer_count()` tap points numbered 1..=L plus layer 0,
//! which is the input itself. For convnets a tap is a stage output; for
//! transformers it is the per-head post-softmax attention of one block.
//!
//! A run walks forward through the taps:
//!
//! ```text
//! begin(x)  ->  advance(j) -> u_j  ->  inject(j, v_j)  ->  ...  ->  finish() -> logits
//! ```
//!
//! `advance` silently completes skipped taps with their own captured value,
//! so capture-then-reinject of the captured tensor reproduces the plain
//! forward pass bit for bit. After `finish`, `backward` differentiates one
//! class logit back to any injected tensor, and optionally to every
//! attention tap a rollout integrand needs.

use ndarray::{Array1, ArrayD};

use crate::error::{ModelError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Cnn,
    Vit,
}

/// Input normalization constants bundled with the model definition.
#[derive(Debug, Clone)]
pub struct Preproc {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Preproc {
    pub fn imagenet() -> Self {
        Preproc {
            mean: vec![0.485, 0.456, 0.406],
            std: vec![0.229, 0.224, 0.225],
        }
    }

    pub fn unit(channels: usize) -> Self {
        Preproc {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelMeta {
    pub id: String,
    pub arch: ArchKind,
    /// Number of tap points beyond the input, i.e. L.
    pub layer_count: usize,
    pub input_hw: (usize, usize),
    pub in_channels: usize,
    pub num_classes: usize,
    /// Patch grid (rows, cols) for transformers.
    pub token_grid: Option<(usize, usize)>,
    /// Attention heads per block for transformers.
    pub heads: Option<usize>,
    pub preproc: Preproc,
}

/// What `backward` should produce.
#[derive(Debug, Clone, Default)]
pub struct GradRequest {
    /// Gradient w.r.t. the tensor used at this tap (the injected v, or the
    /// captured u when the tap was auto-completed).
    pub at_layer: Option<usize>,
    /// Gradients w.r.t. the attention used at blocks 1..=k (transformers).
    pub attentions_upto: Option<usize>,
}

impl GradRequest {
    pub fn at(layer: usize) -> Self {
        GradRequest {
            at_layer: Some(layer),
            attentions_upto: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradBundle<T> {
    pub at_layer: Option<ArrayD<T>>,
    /// Index 0 holds block 1.
    pub attentions: Vec<ArrayD<T>>,
}

impl<T> Default for GradBundle<T> {
    fn default() -> Self {
        GradBundle {
            at_layer: None,
            attentions: Vec::new(),
        }
    }
}

pub trait TapModel<T: Scalar> {
    type Run: Clone + Send;

    fn meta(&self) -> &ModelMeta;

    /// Start a run on one input of shape (in_channels, H, W).
    fn begin(&self, x: ArrayD<T>) -> Result<Self::Run>;

    /// Move the run to tap `layer` and return the captured u_layer.
    /// Taps skipped on the way are completed with their captured value.
    fn advance(&self, run: &mut Self::Run, layer: usize) -> Result<ArrayD<T>>;

    /// Replace the pending captured tensor with `v` and resume.
    fn inject(&self, run: &mut Self::Run, layer: usize, v: ArrayD<T>) -> Result<()>;

    /// Complete all remaining taps and the classifier head.
    fn finish(&self, run: &mut Self::Run) -> Result<Array1<T>>;

    /// Differentiate logit `class` back through a finished run.
    fn backward(&self, run: &Self::Run, class: usize, want: &GradRequest) -> Result<GradBundle<T>>;

    /// Attention tensors as used by a finished run, for blocks 1..=upto.
    fn attentions(&self, _run: &Self::Run, _upto: usize) -> Result<Vec<ArrayD<T>>> {
        Err(ModelError::Unsupported(
            "attention taps exist only on transformer models".into(),
        ))
    }

    fn validate_layer(&self, layer: usize) -> Result<()> {
        let max = self.meta().layer_count;
        if layer > max {
            return Err(ModelError::LayerOutOfRange { layer, max });
        }
        Ok(())
    }
}

/// One forward pass with tensors injected at the given taps.
///
/// Injections must be sorted by layer and unique; they are applied in
/// ascending order within the single pass. Returns the logits and the
/// finished run for a later backward.
pub fn forward_with_injections<T: Scalar, M: TapModel<T>>(
    model: &M,
    x: ArrayD<T>,
    injections: &[(usize, ArrayD<T>)],
) -> Result<(Array1<T>, M::Run)> {
    for pair in injections.windows(2) {
        if pair[0].0 >= pair[1].0 {
            return Err(ModelError::Protocol(
                "injections must be sorted by layer and unique".into(),
            ));
        }
    }
    let mut run = model.begin(x)?;
    for (layer, v) in injections {
        model.advance(&mut run, *layer)?;
        model.inject(&mut run, *layer, v.clone())?;
    }
    let logits = model.finish(&mut run)?;
    Ok((logits, run))
}

/// Gradient of one class logit w.r.t. the tensor injected at `layer`.
pub fn backward_to_injection<T: Scalar, M: TapModel<T>>(
    model: &M,
    run: &M::Run,
    class: usize,
    layer: usize,
) -> Result<ArrayD<T>> {
    let bundle = model.backward(run, class, &GradRequest::at(layer))?;
    bundle
        .at_layer
        .ok_or_else(|| ModelError::Protocol("backward returned no gradient".into()))
}
