//! A convnet as a sequence of stages with a classifier head.
//!
//! Stage `j` maps the tensor at tap `j` to the captured tensor u_{j+1};
//! the stem lives inside stage 0, so tap 0 is the raw preprocessed image
//! and tap L is the final feature map the head consumes.

use std::sync::Arc;

use ndarray::{Array1, Array3, ArrayD, Ix3};

use crate::error::{ModelError, Result};
use crate::instrument::{GradBundle, GradRequest, ModelMeta, TapModel};
use crate::layers::{Layer, LayerCtx, LayerNorm, LayerNormCtx, Linear, LinearCtx1};
use crate::scalar::Scalar;

#[derive(Clone)]
pub struct StagedCnn<T: Scalar> {
    pub meta: ModelMeta,
    pub stages: Vec<Vec<Layer<T>>>,
    pub head: CnnHead<T>,
}

#[derive(Clone)]
pub enum CnnHead<T: Scalar> {
    /// Global average pool then a linear classifier.
    GapLinear { fc: Linear<T> },
    /// Global average pool, layer norm over channels, linear classifier.
    GapNormLinear { norm: LayerNorm<T>, fc: Linear<T> },
    /// Flatten, hidden linear with relu, output linear.
    FlattenMlp { fc1: Linear<T>, fc2: Linear<T> },
}

pub struct HeadCtx<T: Scalar> {
    in_shape: (usize, usize, usize),
    ln: Option<LayerNormCtx<T>>,
    /// Post-relu hidden activations of the mlp head, for its gradient mask.
    hidden: Option<Arc<Array1<T>>>,
    fc1_ctx: Option<LinearCtx1<T>>,
    fc_ctx: LinearCtx1<T>,
}

impl<T: Scalar> CnnHead<T> {
    pub fn forward(&self, x: &Array3<T>) -> (Array1<T>, HeadCtx<T>) {
        let in_shape = x.dim();
        match self {
            CnnHead::GapLinear { fc } => {
                let pooled = crate::layers::global_avg_pool(x);
                let (y, fc_ctx) = fc.forward1(&pooled);
                (
                    y,
                    HeadCtx {
                        in_shape,
                        ln: None,
                        hidden: None,
                        fc1_ctx: None,
                        fc_ctx,
                    },
                )
            }
            CnnHead::GapNormLinear { norm, fc } => {
                let pooled = crate::layers::global_avg_pool(x);
                let c = pooled.len();
                let row = pooled.into_shape_with_order((1, c)).expect("gap reshape");
                let (normed, ln) = norm.forward(&row);
                let nvec = normed.into_shape_with_order(c).expect("gap norm reshape");
                let (y, fc_ctx) = fc.forward1(&nvec);
                (
                    y,
                    HeadCtx {
                        in_shape,
                        ln: Some(ln),
                        hidden: None,
                        fc1_ctx: None,
                        fc_ctx,
                    },
                )
            }
            CnnHead::FlattenMlp { fc1, fc2 } => {
                let (c, h, w) = in_shape;
                let flat = x
                    .to_owned()
                    .into_shape_with_order(c * h * w)
                    .expect("flatten");
                let (mut hidden, fc1_ctx) = fc1.forward1(&flat);
                hidden.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
                let (y, fc_ctx) = fc2.forward1(&hidden);
                (
                    y,
                    HeadCtx {
                        in_shape,
                        ln: None,
                        hidden: Some(Arc::new(hidden)),
                        fc1_ctx: Some(fc1_ctx),
                        fc_ctx,
                    },
                )
            }
        }
    }

    pub fn backward(&self, ctx: &HeadCtx<T>, gy: &Array1<T>) -> Array3<T> {
        match self {
            CnnHead::GapLinear { fc } => {
                let gp = fc.backward1(gy);
                crate::layers::global_avg_pool_backward(&gp, ctx.in_shape)
            }
            CnnHead::GapNormLinear { norm, fc } => {
                let gn = fc.backward1(gy);
                let c = gn.len();
                let grow = gn.into_shape_with_order((1, c)).expect("gap reshape");
                let gx = norm.backward(ctx.ln.as_ref().expect("ln ctx"), &grow);
                let gp = gx.into_shape_with_order(c).expect("gap norm reshape");
                crate::layers::global_avg_pool_backward(&gp, ctx.in_shape)
            }
            CnnHead::FlattenMlp { fc1, fc2 } => {
                let mut gh = fc2.backward1(gy);
                let hidden = ctx.hidden.as_ref().expect("mlp hidden");
                for (g, h) in gh.iter_mut().zip(hidden.iter()) {
                    if *h <= T::zero() {
                        *g = T::zero();
                    }
                }
                let gflat = fc1.backward1(&gh);
                gflat
                    .into_shape_with_order(ctx.in_shape)
                    .expect("unflatten")
            }
        }
    }

    /// Backward that also emits parameter gradients, for heads that train.
    pub fn backward_collect(
        &self,
        ctx: &HeadCtx<T>,
        gy: &Array1<T>,
        prefix: &str,
        out: &mut Vec<(String, ArrayD<T>)>,
    ) -> Array3<T> {
        match self {
            CnnHead::GapLinear { fc } => {
                let (gw, gb) = fc.grad_params1(&ctx.fc_ctx, gy);
                out.push((format!("{prefix}.fc.weight"), gw.into_dyn()));
                if fc.bias.is_some() {
                    out.push((format!("{prefix}.fc.bias"), gb.into_dyn()));
                }
                self.backward(ctx, gy)
            }
            CnnHead::FlattenMlp { fc1, fc2 } => {
                let (gw2, gb2) = fc2.grad_params1(&ctx.fc_ctx, gy);
                out.push((format!("{prefix}.fc2.weight"), gw2.into_dyn()));
                if fc2.bias.is_some() {
                    out.push((format!("{prefix}.fc2.bias"), gb2.into_dyn()));
                }
                let mut gh = fc2.backward1(gy);
                let hidden = ctx.hidden.as_ref().expect("mlp hidden");
                for (g, h) in gh.iter_mut().zip(hidden.iter()) {
                    if *h <= T::zero() {
                        *g = T::zero();
                    }
                }
                let fc1_ctx = ctx.fc1_ctx.as_ref().expect("mlp fc1 ctx");
                let (gw1, gb1) = fc1.grad_params1(fc1_ctx, &gh);
                out.push((format!("{prefix}.fc1.weight"), gw1.into_dyn()));
                if fc1.bias.is_some() {
                    out.push((format!("{prefix}.fc1.bias"), gb1.into_dyn()));
                }
                let gflat = fc1.backward1(&gh);
                gflat
                    .into_shape_with_order(ctx.in_shape)
                    .expect("unflatten")
            }
            CnnHead::GapNormLinear { .. } => {
                unimplemented!("training is not wired for the norm head")
            }
        }
    }
}

type StageTape<T> = Vec<LayerCtx<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RunPos {
    Start,
    /// advance(j) ran; u_j is the current tensor, awaiting inject or finish.
    Pending(usize),
    /// Tap j is complete.
    Done(usize),
}

pub struct CnnRun<T: Scalar> {
    cur: Array3<T>,
    pos: RunPos,
    tapes: Vec<Arc<StageTape<T>>>,
    head_ctx: Option<Arc<HeadCtx<T>>>,
    logits: Option<Array1<T>>,
}

impl<T: Scalar> Clone for CnnRun<T> {
    fn clone(&self) -> Self {
        CnnRun {
            cur: self.cur.clone(),
            pos: self.pos,
            tapes: self.tapes.clone(),
            head_ctx: self.head_ctx.clone(),
            logits: self.logits.clone(),
        }
    }
}

impl<T: Scalar> StagedCnn<T> {
    fn run_stage(&self, stage: usize, run: &mut CnnRun<T>) {
        let mut tape = Vec::with_capacity(self.stages[stage].len());
        let mut cur = std::mem::replace(&mut run.cur, Array3::zeros((0, 0, 0)));
        for layer in &self.stages[stage] {
            let (next, ctx) = layer.forward(&cur);
            tape.push(ctx);
            cur = next;
        }
        run.cur = cur;
        debug_assert_eq!(run.tapes.len(), stage);
        run.tapes.push(Arc::new(tape));
    }

    /// Complete taps up to and including `upto` with their captured values.
    fn complete_to(&self, run: &mut CnnRun<T>, upto: usize) -> Result<()> {
        loop {
            let done = match run.pos {
                RunPos::Start => {
                    run.pos = RunPos::Done(0);
                    0
                }
                RunPos::Pending(j) => {
                    run.pos = RunPos::Done(j);
                    j
                }
                RunPos::Done(j) => j,
            };
            if done >= upto {
                return Ok(());
            }
            self.run_stage(done, run);
            run.pos = RunPos::Done(done + 1);
        }
    }

    fn backward_stage(&self, stage: usize, tape: &StageTape<T>, gy: Array3<T>) -> Array3<T> {
        let mut g = gy;
        for (layer, ctx) in self.stages[stage].iter().zip(tape.iter()).rev() {
            g = layer.backward(ctx, &g);
        }
        g
    }

    /// Plain forward plus a full tape, for training loops.
    pub fn train_forward(&self, x: Array3<T>) -> (Array1<T>, CnnRun<T>) {
        let mut run = CnnRun {
            cur: x,
            pos: RunPos::Start,
            tapes: Vec::with_capacity(self.stages.len()),
            head_ctx: None,
            logits: None,
        };
        self.complete_to(&mut run, self.stages.len())
            .expect("plain forward");
        let (logits, hctx) = self.head.forward(&run.cur);
        run.head_ctx = Some(Arc::new(hctx));
        run.logits = Some(logits.clone());
        (logits, run)
    }

    /// Backward from a logit-space gradient, collecting parameter gradients
    /// for every layer that knows how to emit them.
    pub fn train_backward(
        &self,
        run: &CnnRun<T>,
        g_logits: &Array1<T>,
    ) -> Vec<(String, ArrayD<T>)> {
        let mut grads = Vec::new();
        let hctx = run.head_ctx.as_ref().expect("finished run");
        let mut g = self
            .head
            .backward_collect(hctx, g_logits, "head", &mut grads);
        for stage in (0..self.stages.len()).rev() {
            let tape = &run.tapes[stage];
            for (i, (layer, ctx)) in self.stages[stage]
                .iter()
                .zip(tape.iter())
                .enumerate()
                .rev()
            {
                let prefix = format!("stage{stage}.{i}");
                g = layer.backward_collect(ctx, &g, &prefix, &mut grads);
            }
        }
        grads
    }
}

impl<T: Scalar> TapModel<T> for StagedCnn<T> {
    type Run = CnnRun<T>;

    fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    fn begin(&self, x: ArrayD<T>) -> Result<Self::Run> {
        let x = x
            .into_dimensionality::<Ix3>()
            .map_err(|_| ModelError::Protocol("input must be rank 3 (C, H, W)".into()))?;
        let (c, h, w) = x.dim();
        let want = (
            self.meta.in_channels,
            self.meta.input_hw.0,
            self.meta.input_hw.1,
        );
        if (c, h, w) != want {
            return Err(ModelError::shape("model input", &[want.0, want.1, want.2], &[c, h, w]));
        }
        Ok(CnnRun {
            cur: x,
            pos: RunPos::Start,
            tapes: Vec::with_capacity(self.stages.len()),
            head_ctx: None,
            logits: None,
        })
    }

    fn advance(&self, run: &mut Self::Run, layer: usize) -> Result<ArrayD<T>> {
        self.validate_layer(layer)?;
        if run.logits.is_some() {
            return Err(ModelError::Protocol("run is already finished".into()));
        }
        let reached = match run.pos {
            RunPos::Start => layer == 0,
            RunPos::Pending(j) | RunPos::Done(j) => {
                if j >= layer {
                    return Err(ModelError::Protocol(format!(
                        "cannot advance to tap {layer}: run is already at tap {j}"
                    )));
                }
                false
            }
        };
        if !reached {
            self.complete_to(run, layer.saturating_sub(1))?;
            if layer > 0 {
                self.run_stage(layer - 1, run);
            }
        }
        run.pos = RunPos::Pending(layer);
        Ok(run.cur.clone().into_dyn())
    }

    fn inject(&self, run: &mut Self::Run, layer: usize, v: ArrayD<T>) -> Result<()> {
        if run.pos != RunPos::Pending(layer) {
            return Err(ModelError::Protocol(format!(
                "inject at tap {layer} without a matching advance"
            )));
        }
        let v = v
            .into_dimensionality::<Ix3>()
            .map_err(|_| ModelError::Protocol("injected tensor must be rank 3".into()))?;
        if v.dim() != run.cur.dim() {
            let d = run.cur.dim();
            let g = v.dim();
            return Err(ModelError::shape(
                "injected tensor",
                &[d.0, d.1, d.2],
                &[g.0, g.1, g.2],
            ));
        }
        run.cur = v;
        run.pos = RunPos::Done(layer);
        Ok(())
    }

    fn finish(&self, run: &mut Self::Run) -> Result<Array1<T>> {
        if let Some(logits) = &run.logits {
            return Ok(logits.clone());
        }
        self.complete_to(run, self.stages.len())?;
        let (logits, hctx) = self.head.forward(&run.cur);
        run.head_ctx = Some(Arc::new(hctx));
        run.logits = Some(logits.clone());
        Ok(logits)
    }

    fn backward(&self, run: &Self::Run, class: usize, want: &GradRequest) -> Result<GradBundle<T>> {
        let hctx = run
            .head_ctx
            .as_ref()
            .ok_or_else(|| ModelError::Protocol("backward before finish".into()))?;
        let logits = run.logits.as_ref().expect("finished run");
        if class >= logits.len() {
            return Err(ModelError::Protocol(format!(
                "class {class} out of range for {} logits",
                logits.len()
            )));
        }
        if want.attentions_upto.is_some() {
            return Err(ModelError::Unsupported(
                "attention gradients exist only on transformer models".into(),
            ));
        }
        let target = match want.at_layer {
            Some(l) => {
                self.validate_layer(l)?;
                l
            }
            None => {
                return Ok(GradBundle::default());
            }
        };
        let mut seed = Array1::zeros(logits.len());
        seed[class] = T::one();
        let mut g = self.head.backward(hctx, &seed);
        for stage in (target..self.stages.len()).rev() {
            g = self.backward_stage(stage, &run.tapes[stage], g);
        }
        Ok(GradBundle {
            at_layer: Some(g.into_dyn()),
            attentions: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::{ArchKind, Preproc};
    use crate::layers::{Conv2d, MaxPool2d, Relu};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cnn() -> StagedCnn<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let meta = ModelMeta {
            id: "tiny".into(),
            arch: ArchKind::Cnn,
            layer_count: 2,
            input_hw: (8, 8),
            in_channels: 2,
            num_classes: 3,
            token_grid: None,
            heads: None,
            preproc: Preproc::unit(2),
        };
        let stage0 = vec![
            Layer::Conv(Conv2d::new(
                crate::init::he_conv(&mut rng, 4, 2, 3, 3),
                Some(crate::init::zeros1(4)),
                (1, 1),
                (1, 1),
                1,
            )),
            Layer::Relu(Relu),
        ];
        let stage1 = vec![
            Layer::Conv(Conv2d::new(
                crate::init::he_conv(&mut rng, 6, 4, 3, 3),
                Some(crate::init::zeros1(6)),
                (2, 2),
                (1, 1),
                1,
            )),
            Layer::Relu(Relu),
            Layer::MaxPool(MaxPool2d {
                kernel: (2, 2),
                stride: (2, 2),
                padding: (0, 0),
            }),
        ];
        let fc = Linear::new(
            crate::init::he_linear(&mut rng, 3, 6),
            Some(crate::init::zeros1(3)),
        );
        StagedCnn {
            meta,
            stages: vec![stage0, stage1],
            head: CnnHead::GapLinear { fc },
        }
    }

    fn rand_input(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ArrayD<f64> {
        let n = c * h * w;
        let v: Vec<f64> = (0..n).map(|_| crate::init::normal(rng)).collect();
        ArrayD::from_shape_vec(ndarray::IxDyn(&[c, h, w]), v).unwrap()
    }

    #[test]
    fn capture_reinject_matches_plain_forward() {
        let model = tiny_cnn();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_input(&mut rng, 2, 8, 8);

        let mut plain = model.begin(x.clone()).unwrap();
        let y_plain = model.finish(&mut plain).unwrap();

        let mut run = model.begin(x.clone()).unwrap();
        for layer in 0..=2 {
            let u = model.advance(&mut run, layer).unwrap();
            model.inject(&mut run, layer, u).unwrap();
        }
        let y_inject = model.finish(&mut run).unwrap();
        assert_eq!(y_plain, y_inject);
    }

    #[test]
    fn advance_rejects_backward_movement() {
        let model = tiny_cnn();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut run = model.begin(rand_input(&mut rng, 2, 8, 8)).unwrap();
        model.advance(&mut run, 1).unwrap();
        let u = model.advance(&mut run, 1).map(|_| ());
        assert!(u.is_err());
    }

    #[test]
    fn injected_gradient_matches_finite_differences() {
        let model = tiny_cnn();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_input(&mut rng, 2, 8, 8);
        let class = 1usize;

        for layer in [0usize, 1, 2] {
            let mut probe = model.begin(x.clone()).unwrap();
            let u = model.advance(&mut probe, layer).unwrap();

            let mut run = model.begin(x.clone()).unwrap();
            model.advance(&mut run, layer).unwrap();
            model.inject(&mut run, layer, u.clone()).unwrap();
            model.finish(&mut run).unwrap();
            let g = model
                .backward(&run, class, &GradRequest::at(layer))
                .unwrap()
                .at_layer
                .unwrap();

            let mut f = |v: &ArrayD<f64>| {
                let mut r = model.begin(x.clone()).unwrap();
                model.advance(&mut r, layer).unwrap();
                model.inject(&mut r, layer, v.clone()).unwrap();
                model.finish(&mut r).unwrap()[class]
            };
            let err = crate::fdcheck::max_rel_err(&mut f, &u, &g, 60, 1e-5, &mut rng);
            assert!(err < 1e-6, "tap {layer}: fd mismatch {err}");
        }
    }

    #[test]
    fn finish_is_idempotent() {
        let model = tiny_cnn();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut run = model.begin(rand_input(&mut rng, 2, 8, 8)).unwrap();
        let a = model.finish(&mut run).unwrap();
        let b = model.finish(&mut run).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let model = tiny_cnn();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(model.begin(rand_input(&mut rng, 2, 8, 7)).is_err());
        assert!(model.begin(rand_input(&mut rng, 3, 8, 8)).is_err());
    }
}
