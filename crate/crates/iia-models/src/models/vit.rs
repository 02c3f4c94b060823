//! A vision transformer whose taps are the per-head post-softmax attention
//! matrices, one per block.
//!
//! Tap 0 is the input image; tap j (1..=blocks) captures the (heads, T, T)
//! attention of block j between its softmax and the value mixing. Injection
//! replaces the attention actually used downstream; the softmax inputs stop
//! receiving gradient at an injected block while the value path still flows.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, Array3, ArrayD, Axis, Ix3};

use crate::error::{ModelError, Result};
use crate::instrument::{GradBundle, GradRequest, ModelMeta, TapModel};
use crate::layers::{
    softmax_rows_backward, softmax_rows_inplace, Conv2d, ConvCtx, Gelu, GeluCtx, LayerNorm,
    LayerNormCtx, Linear,
};
use crate::scalar::Scalar;

#[derive(Clone)]
pub struct PatchEmbed<T: Scalar> {
    pub proj: Conv2d<T>,
    pub cls: Arc<Array1<T>>,
    /// Positional table including the class token row, (T, D).
    pub pos: Arc<Array2<T>>,
}

pub struct EmbedCtx<T: Scalar> {
    conv: ConvCtx<T>,
    grid: (usize, usize),
}

impl<T: Scalar> PatchEmbed<T> {
    fn forward(&self, img: &Array3<T>) -> (Array2<T>, EmbedCtx<T>) {
        let (feat, conv) = self.proj.forward(img);
        let (d, gh, gw) = feat.dim();
        let flat = feat
            .into_shape_with_order((d, gh * gw))
            .expect("patch flatten");
        let n = gh * gw;
        let mut tokens = Array2::zeros((n + 1, d));
        tokens.row_mut(0).assign(self.cls.as_ref());
        tokens.slice_mut(s![1.., ..]).assign(&flat.t());
        tokens += self.pos.as_ref();
        (tokens, EmbedCtx { conv, grid: (gh, gw) })
    }

    fn backward(&self, ctx: &EmbedCtx<T>, g_tokens: &Array2<T>) -> Array3<T> {
        let (gh, gw) = ctx.grid;
        let d = g_tokens.dim().1;
        let g_patch = g_tokens.slice(s![1.., ..]);
        let g_feat = g_patch
            .t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((d, gh, gw))
            .expect("patch unflatten");
        self.proj.backward(&ctx.conv, &g_feat)
    }
}

#[derive(Clone)]
pub struct VitBlock<T: Scalar> {
    pub ln1: LayerNorm<T>,
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub heads: usize,
}

pub struct FrontCtx<T: Scalar> {
    x: Arc<Array2<T>>,
    ln1: LayerNormCtx<T>,
    q: Arc<Array3<T>>,
    k: Arc<Array3<T>>,
    v: Arc<Array3<T>>,
    a_computed: Arc<Array3<T>>,
}

pub struct BackCtx<T: Scalar> {
    a_used: Arc<Array3<T>>,
    ln2: LayerNormCtx<T>,
    gelu: GeluCtx<T>,
    injected: bool,
}

pub struct BlockTape<T: Scalar> {
    front: FrontCtx<T>,
    back: BackCtx<T>,
}

impl<T: Scalar> VitBlock<T> {
    /// Everything up to and including the attention softmax.
    fn front(&self, x: Arc<Array2<T>>) -> FrontCtx<T> {
        let (t, d) = x.dim();
        let h = self.heads;
        let dh = d / h;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let (xn, ln1) = self.ln1.forward(&x);
        let (qkv, _) = self.qkv.forward2(&xn);

        let mut q = Array3::zeros((h, t, dh));
        let mut k = Array3::zeros((h, t, dh));
        let mut v = Array3::zeros((h, t, dh));
        for hd in 0..h {
            let c0 = hd * dh;
            q.index_axis_mut(Axis(0), hd)
                .assign(&qkv.slice(s![.., c0..c0 + dh]));
            k.index_axis_mut(Axis(0), hd)
                .assign(&qkv.slice(s![.., d + c0..d + c0 + dh]));
            v.index_axis_mut(Axis(0), hd)
                .assign(&qkv.slice(s![.., 2 * d + c0..2 * d + c0 + dh]));
        }

        let mut a = Array3::zeros((h, t, t));
        for hd in 0..h {
            let qh = q.index_axis(Axis(0), hd);
            let kh = k.index_axis(Axis(0), hd);
            let mut s = qh.dot(&kh.t());
            s.mapv_inplace(|e| e * scale);
            softmax_rows_inplace(&mut s);
            a.index_axis_mut(Axis(0), hd).assign(&s);
        }

        FrontCtx {
            x,
            ln1,
            q: Arc::new(q),
            k: Arc::new(k),
            v: Arc::new(v),
            a_computed: Arc::new(a),
        }
    }

    /// Value mixing, projection, and the mlp, given the attention to use.
    fn back(&self, front: FrontCtx<T>, a_used: Arc<Array3<T>>, injected: bool) -> (Array2<T>, BlockTape<T>) {
        let (t, d) = front.x.dim();
        let h = self.heads;
        let dh = d / h;

        let mut o = Array2::zeros((t, d));
        for hd in 0..h {
            let ah = a_used.index_axis(Axis(0), hd);
            let vh = front.v.index_axis(Axis(0), hd);
            let oh = ah.dot(&vh);
            o.slice_mut(s![.., hd * dh..(hd + 1) * dh]).assign(&oh);
        }

        let (po, _) = self.proj.forward2(&o);
        let r1 = front.x.as_ref() + &po;
        let (x2n, ln2) = self.ln2.forward(&r1);
        let (h1, _) = self.fc1.forward2(&x2n);
        let (hg, gelu) = Gelu.forward(&h1);
        let (h2, _) = self.fc2.forward2(&hg);
        let out = &r1 + &h2;

        let tape = BlockTape {
            front,
            back: BackCtx {
                a_used,
                ln2,
                gelu,
                injected,
            },
        };
        (out, tape)
    }

    /// Gradients w.r.t. the block input and the attention actually used.
    fn backward(&self, tape: &BlockTape<T>, g_out: &Array2<T>) -> (Array2<T>, Array3<T>) {
        let (t, d) = tape.front.x.dim();
        let h = self.heads;
        let dh = d / h;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let g_hg = self.fc2.backward2(g_out);
        let g_h1 = Gelu.backward(&tape.back.gelu, &g_hg);
        let g_x2n = self.fc1.backward2(&g_h1);
        let mut g_r1 = g_out.clone();
        g_r1 += &self.ln2.backward(&tape.back.ln2, &g_x2n);

        let g_o = self.proj.backward2(&g_r1);

        let mut g_a = Array3::zeros((h, t, t));
        let mut g_qkv = Array2::zeros((t, 3 * d));
        for hd in 0..h {
            let c0 = hd * dh;
            let g_oh = g_o.slice(s![.., c0..c0 + dh]);
            let vh = tape.front.v.index_axis(Axis(0), hd);
            let ah_used = tape.back.a_used.index_axis(Axis(0), hd);

            g_a.index_axis_mut(Axis(0), hd)
                .assign(&g_oh.dot(&vh.t()));
            let g_vh = ah_used.t().dot(&g_oh);
            g_qkv
                .slice_mut(s![.., 2 * d + c0..2 * d + c0 + dh])
                .assign(&g_vh);

            if !tape.back.injected {
                let ah = tape.front.a_computed.index_axis(Axis(0), hd);
                let g_ah = g_a.index_axis(Axis(0), hd).to_owned();
                let mut g_s = softmax_rows_backward(&ah.to_owned(), &g_ah);
                g_s.mapv_inplace(|e| e * scale);
                let qh = tape.front.q.index_axis(Axis(0), hd);
                let kh = tape.front.k.index_axis(Axis(0), hd);
                g_qkv
                    .slice_mut(s![.., c0..c0 + dh])
                    .assign(&g_s.dot(&kh));
                g_qkv
                    .slice_mut(s![.., d + c0..d + c0 + dh])
                    .assign(&g_s.t().dot(&qh));
            }
        }

        let g_xn = self.qkv.backward2(&g_qkv);
        let mut g_x = g_r1;
        g_x += &self.ln1.backward(&tape.front.ln1, &g_xn);
        (g_x, g_a)
    }
}

#[derive(Clone)]
pub struct VitModel<T: Scalar> {
    pub meta: ModelMeta,
    pub embed: PatchEmbed<T>,
    pub blocks: Vec<VitBlock<T>>,
    pub norm: LayerNorm<T>,
    pub head: Linear<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RunPos {
    Start,
    Pending(usize),
    Done(usize),
}

pub struct VitRun<T: Scalar> {
    img: Array3<T>,
    tokens: Option<Array2<T>>,
    pos: RunPos,
    embed_ctx: Option<Arc<EmbedCtx<T>>>,
    pending_front: Option<Arc<FrontCtx<T>>>,
    tapes: Vec<Arc<BlockTape<T>>>,
    norm_ctx: Option<Arc<LayerNormCtx<T>>>,
    logits: Option<Array1<T>>,
}

impl<T: Scalar> Clone for VitRun<T> {
    fn clone(&self) -> Self {
        VitRun {
            img: self.img.clone(),
            tokens: self.tokens.clone(),
            pos: self.pos,
            embed_ctx: self.embed_ctx.clone(),
            pending_front: self.pending_front.clone(),
            tapes: self.tapes.clone(),
            norm_ctx: self.norm_ctx.clone(),
            logits: self.logits.clone(),
        }
    }
}

impl<T: Scalar> VitModel<T> {
    fn attention_shape(&self) -> (usize, usize) {
        let (gh, gw) = self.meta.token_grid.expect("vit has a token grid");
        (self.meta.heads.expect("vit has heads"), gh * gw + 1)
    }

    fn embed_if_needed(&self, run: &mut VitRun<T>) {
        if run.tokens.is_none() {
            let (tokens, ctx) = self.embed.forward(&run.img);
            run.tokens = Some(tokens);
            run.embed_ctx = Some(Arc::new(ctx));
        }
    }

    /// Run block `b` (1-based) front, leaving the run pending at its tap.
    fn open_block(&self, run: &mut VitRun<T>, b: usize) {
        self.embed_if_needed(run);
        let x = Arc::new(run.tokens.take().expect("tokens present"));
        let front = self.blocks[b - 1].front(x);
        run.pending_front = Some(Arc::new(front));
        run.pos = RunPos::Pending(b);
    }

    /// Complete the pending block with `a_used`.
    fn close_block(&self, run: &mut VitRun<T>, b: usize, a_used: Arc<Array3<T>>, injected: bool) {
        let front_arc = run.pending_front.take().expect("pending front");
        let front = Arc::try_unwrap(front_arc).unwrap_or_else(|arc| FrontCtx {
            x: arc.x.clone(),
            ln1: arc.ln1.clone(),
            q: arc.q.clone(),
            k: arc.k.clone(),
            v: arc.v.clone(),
            a_computed: arc.a_computed.clone(),
        });
        let (out, tape) = self.blocks[b - 1].back(front, a_used, injected);
        run.tokens = Some(out);
        debug_assert_eq!(run.tapes.len(), b - 1);
        run.tapes.push(Arc::new(tape));
        run.pos = RunPos::Done(b);
    }

    /// Complete taps with their captured values until tap `upto` is done.
    fn complete_to(&self, run: &mut VitRun<T>, upto: usize) {
        loop {
            let done = match run.pos {
                RunPos::Start => {
                    run.pos = RunPos::Done(0);
                    0
                }
                RunPos::Pending(0) => {
                    run.pos = RunPos::Done(0);
                    0
                }
                RunPos::Pending(b) => {
                    let a = run
                        .pending_front
                        .as_ref()
                        .expect("pending front")
                        .a_computed
                        .clone();
                    self.close_block(run, b, a, false);
                    b
                }
                RunPos::Done(b) => b,
            };
            if done >= upto {
                return;
            }
            self.open_block(run, done + 1);
            let a = run
                .pending_front
                .as_ref()
                .expect("pending front")
                .a_computed
                .clone();
            self.close_block(run, done + 1, a, false);
        }
    }
}

impl<T: Scalar> TapModel<T> for VitModel<T> {
    type Run = VitRun<T>;

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
            return Err(ModelError::shape(
                "model input",
                &[want.0, want.1, want.2],
                &[c, h, w],
            ));
        }
        Ok(VitRun {
            img: x,
            tokens: None,
            pos: RunPos::Start,
            embed_ctx: None,
            pending_front: None,
            tapes: Vec::with_capacity(self.blocks.len()),
            norm_ctx: None,
            logits: None,
        })
    }

    fn advance(&self, run: &mut Self::Run, layer: usize) -> Result<ArrayD<T>> {
        self.validate_layer(layer)?;
        if run.logits.is_some() {
            return Err(ModelError::Protocol("run is already finished".into()));
        }
        match run.pos {
            RunPos::Start => {}
            RunPos::Pending(j) | RunPos::Done(j) => {
                if j >= layer {
                    return Err(ModelError::Protocol(format!(
                        "cannot advance to tap {layer}: run is already at tap {j}"
                    )));
                }
            }
        }
        if layer == 0 {
            run.pos = RunPos::Pending(0);
            return Ok(run.img.clone().into_dyn());
        }
        self.complete_to(run, layer - 1);
        self.open_block(run, layer);
        let a = run
            .pending_front
            .as_ref()
            .expect("pending front")
            .a_computed
            .as_ref()
            .clone();
        Ok(a.into_dyn())
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
        if layer == 0 {
            if v.dim() != run.img.dim() {
                let d = run.img.dim();
                let g = v.dim();
                return Err(ModelError::shape(
                    "injected input",
                    &[d.0, d.1, d.2],
                    &[g.0, g.1, g.2],
                ));
            }
            run.img = v;
            run.tokens = None;
            run.embed_ctx = None;
            run.pos = RunPos::Done(0);
            return Ok(());
        }
        let (heads, t) = self.attention_shape();
        if v.dim() != (heads, t, t) {
            let g = v.dim();
            return Err(ModelError::shape(
                "injected attention",
                &[heads, t, t],
                &[g.0, g.1, g.2],
            ));
        }
        self.close_block(run, layer, Arc::new(v), true);
        Ok(())
    }

    fn finish(&self, run: &mut Self::Run) -> Result<Array1<T>> {
        if let Some(logits) = &run.logits {
            return Ok(logits.clone());
        }
        self.complete_to(run, self.blocks.len());
        self.embed_if_needed(run);
        let tokens = run.tokens.as_ref().expect("tokens present");
        let (normed, nctx) = self.norm.forward(tokens);
        let cls = normed.row(0).to_owned();
        let (logits, _) = self.head.forward1(&cls);
        run.norm_ctx = Some(Arc::new(nctx));
        run.logits = Some(logits.clone());
        Ok(logits)
    }

    fn backward(&self, run: &Self::Run, class: usize, want: &GradRequest) -> Result<GradBundle<T>> {
        let logits = run
            .logits
            .as_ref()
            .ok_or_else(|| ModelError::Protocol("backward before finish".into()))?;
        if class >= logits.len() {
            return Err(ModelError::Protocol(format!(
                "class {class} out of range for {} logits",
                logits.len()
            )));
        }
        if let Some(l) = want.at_layer {
            self.validate_layer(l)?;
        }
        if let Some(k) = want.attentions_upto {
            if k > self.blocks.len() {
                return Err(ModelError::LayerOutOfRange {
                    layer: k,
                    max: self.blocks.len(),
                });
            }
        }
        let att_upto = want.attentions_upto.unwrap_or(0);
        let stop = match want.at_layer {
            Some(0) => 1,
            Some(j) => j.min(if att_upto > 0 { 1 } else { j }),
            None if att_upto > 0 => 1,
            None => return Ok(GradBundle::default()),
        };

        let mut seed = Array1::zeros(logits.len());
        seed[class] = T::one();
        let g_cls = self.head.backward1(&seed);
        let tokens = run.tokens.as_ref().expect("finished run");
        let mut g_normed = Array2::zeros(tokens.dim());
        g_normed.row_mut(0).assign(&g_cls);
        let nctx = run.norm_ctx.as_ref().expect("finished run");
        let mut g_tokens = self.norm.backward(nctx, &g_normed);

        let mut at_grad: Option<ArrayD<T>> = None;
        let mut attentions: Vec<Option<ArrayD<T>>> = vec![None; att_upto];
        for b in (stop..=self.blocks.len()).rev() {
            let tape = &run.tapes[b - 1];
            let (g_x, g_a) = self.blocks[b - 1].backward(tape, &g_tokens);
            g_tokens = g_x;
            if want.at_layer == Some(b) {
                at_grad = Some(g_a.clone().into_dyn());
            }
            if b <= att_upto {
                attentions[b - 1] = Some(g_a.into_dyn());
            }
        }
        if want.at_layer == Some(0) {
            let ectx = run.embed_ctx.as_ref().expect("finished run");
            at_grad = Some(self.embed.backward(ectx, &g_tokens).into_dyn());
        }

        Ok(GradBundle {
            at_layer: at_grad,
            attentions: attentions.into_iter().flatten().collect(),
        })
    }

    fn attentions(&self, run: &Self::Run, upto: usize) -> Result<Vec<ArrayD<T>>> {
        if upto > run.tapes.len() {
            return Err(ModelError::Protocol(format!(
                "attentions up to block {upto} requested but only {} blocks are complete",
                run.tapes.len()
            )));
        }
        Ok(run
            .tapes
            .iter()
            .take(upto)
            .map(|t| t.back.a_used.as_ref().clone().into_dyn())
            .collect())
    }
}

const LN_EPS: f64 = 1e-6;

fn build_block<T: Scalar>(
    rng: &mut rand_chacha::ChaCha8Rng,
    dim: usize,
    heads: usize,
    hidden: usize,
) -> VitBlock<T> {
    use crate::init;
    VitBlock {
        ln1: LayerNorm::identity(dim, LN_EPS),
        qkv: Linear::new(
            init::he_linear(rng, 3 * dim, dim),
            Some(init::zeros1(3 * dim)),
        ),
        proj: Linear::new(init::he_linear(rng, dim, dim), Some(init::zeros1(dim))),
        ln2: LayerNorm::identity(dim, LN_EPS),
        fc1: Linear::new(init::he_linear(rng, hidden, dim), Some(init::zeros1(hidden))),
        fc2: Linear::new(init::he_linear(rng, dim, hidden), Some(init::zeros1(dim))),
        heads,
    }
}

/// Assemble a transformer from its dimensions, drawing every parameter from
/// the given rng.
#[allow(clippy::too_many_arguments)]
pub fn build_vit<T: Scalar>(
    rng: &mut rand_chacha::ChaCha8Rng,
    img: usize,
    patch: usize,
    dim: usize,
    heads: usize,
    blocks: usize,
    classes: usize,
    id: &str,
) -> VitModel<T> {
    use crate::init;
    use crate::instrument::{ArchKind, Preproc};
    assert!(img % patch == 0, "image size must be a patch multiple");
    let grid = img / patch;
    let tokens = grid * grid + 1;
    let embed = PatchEmbed {
        proj: Conv2d::new(
            init::he_conv(rng, dim, 3, patch, patch),
            Some(init::zeros1(dim)),
            (patch, patch),
            (0, 0),
            1,
        ),
        cls: Arc::new(Array1::from_vec(init::trunc_normal_like(rng, &[dim], 0.02))),
        pos: Arc::new(
            Array2::from_shape_vec(
                (tokens, dim),
                init::trunc_normal_like(rng, &[tokens, dim], 0.02),
            )
            .expect("pos table"),
        ),
    };
    let body: Vec<VitBlock<T>> = (0..blocks)
        .map(|_| build_block(rng, dim, heads, 4 * dim))
        .collect();
    let head = Linear::new(
        init::he_linear(rng, classes, dim),
        Some(init::zeros1(classes)),
    );
    VitModel {
        meta: ModelMeta {
            id: id.into(),
            arch: ArchKind::Vit,
            layer_count: blocks,
            input_hw: (img, img),
            in_channels: 3,
            num_classes: classes,
            token_grid: Some((grid, grid)),
            heads: Some(heads),
            preproc: Preproc::imagenet(),
        },
        embed,
        blocks: body,
        norm: LayerNorm::identity(dim, LN_EPS),
        head,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::toy::toy_vit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_input(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ArrayD<f64> {
        let n = c * h * w;
        let v: Vec<f64> = (0..n).map(|_| crate::init::normal(rng)).collect();
        ArrayD::from_shape_vec(ndarray::IxDyn(&[c, h, w]), v).unwrap()
    }

    #[test]
    fn capture_reinject_matches_plain_forward() {
        let model = toy_vit(11);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hw = model.meta.input_hw;
        let x = rand_input(&mut rng, 3, hw.0, hw.1);

        let mut plain = model.begin(x.clone()).unwrap();
        let y_plain = model.finish(&mut plain).unwrap();

        let mut run = model.begin(x).unwrap();
        for layer in 0..=model.meta.layer_count {
            let u = model.advance(&mut run, layer).unwrap();
            model.inject(&mut run, layer, u).unwrap();
        }
        let y_inject = model.finish(&mut run).unwrap();
        assert_eq!(y_plain, y_inject);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let model = toy_vit(12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hw = model.meta.input_hw;
        let mut run = model.begin(rand_input(&mut rng, 3, hw.0, hw.1)).unwrap();
        let a = model.advance(&mut run, 2).unwrap();
        let a = a.into_dimensionality::<Ix3>().unwrap();
        for hd in a.axis_iter(Axis(0)) {
            for row in hd.outer_iter() {
                let s: f64 = row.sum();
                assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
            }
        }
    }

    #[test]
    fn injected_attention_gradient_matches_finite_differences() {
        let model = toy_vit(13);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hw = model.meta.input_hw;
        let x = rand_input(&mut rng, 3, hw.0, hw.1);
        let class = 2usize;
        let layer = 2usize;

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
        assert!(err < 1e-5, "attention fd mismatch {err}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let model = toy_vit(14);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hw = model.meta.input_hw;
        let x = rand_input(&mut rng, 3, hw.0, hw.1);
        let class = 0usize;

        let mut run = model.begin(x.clone()).unwrap();
        model.advance(&mut run, 0).unwrap();
        model.inject(&mut run, 0, x.clone()).unwrap();
        model.finish(&mut run).unwrap();
        let g = model
            .backward(&run, class, &GradRequest::at(0))
            .unwrap()
            .at_layer
            .unwrap();

        let mut f = |v: &ArrayD<f64>| {
            let mut r = model.begin(v.clone()).unwrap();
            model.finish(&mut r).unwrap()[class]
        };
        let err = crate::fdcheck::max_rel_err(&mut f, &x, &g, 60, 1e-5, &mut rng);
        assert!(err < 1e-5, "input fd mismatch {err}");
    }

    #[test]
    fn attention_grads_cover_all_blocks() {
        let model = toy_vit(15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hw = model.meta.input_hw;
        let x = rand_input(&mut rng, 3, hw.0, hw.1);
        let blocks = model.meta.layer_count;

        let mut run = model.begin(x).unwrap();
        model.finish(&mut run).unwrap();
        let bundle = model
            .backward(
                &run,
                1,
                &GradRequest {
                    at_layer: None,
                    attentions_upto: Some(blocks),
                },
            )
            .unwrap();
        assert_eq!(bundle.attentions.len(), blocks);
        let used = model.attentions(&run, blocks).unwrap();
        assert_eq!(used.len(), blocks);
        for (g, a) in bundle.attentions.iter().zip(used.iter()) {
            assert_eq!(g.shape(), a.shape());
        }
    }

    #[test]
    fn injection_cuts_softmax_feedback() {
        // With the attention injected, its gradient must not depend on the
        // query/key path; perturbing the injected tensor must still move the
        // logits (value path alive).
        let model = toy_vit(16);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hw = model.meta.input_hw;
        let x = rand_input(&mut rng, 3, hw.0, hw.1);

        let mut run = model.begin(x.clone()).unwrap();
        let u = model.advance(&mut run, 1).unwrap();
        let mut bumped = u.clone();
        bumped[[0, 0, 0]] += 0.05;
        model.inject(&mut run, 1, bumped).unwrap();
        let y_bumped = model.finish(&mut run).unwrap();

        let mut plain = model.begin(x).unwrap();
        let y_plain = model.finish(&mut plain).unwrap();
        let diff: f64 = y_bumped
            .iter()
            .zip(y_plain.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-9, "injected attention had no downstream effect");
    }
}
