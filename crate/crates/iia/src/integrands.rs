//! Integrand functions mapping captured representations and their gradients
//! to the tensor accumulated at each grid point.
//!
//! Convnets use the activation-times-gradient product; transformers use
//! Gradient Rollout over the per-block attention stacks. Attention Rollout
//! is the gradient-free reduction of the latter and doubles as a baseline.

use ndarray::{Array2, Array3, ArrayD};

use crate::error::{AttributionError, Result};

/// How rollout combines the per-block matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RolloutCombine {
    #[default]
    Product,
    Sum,
}

impl RolloutCombine {
    pub fn name(&self) -> &'static str {
        match self {
            RolloutCombine::Product => "product",
            RolloutCombine::Sum => "sum",
        }
    }
}

/// Integrand selector, carried by attribution runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrand {
    /// q = gradient of the class logit w.r.t. the used representation.
    PlainGradient,
    /// q = representation Hadamard its gradient (convnet default).
    ActivationGradientProduct,
    /// q = Gradient Rollout over blocks 1..=l (transformer default).
    GradientRollout(RolloutCombine),
    /// q = Attention Rollout over blocks 1..=l; ignores gradients.
    AttentionRollout(RolloutCombine),
}

impl Integrand {
    pub fn name(&self) -> &'static str {
        match self {
            Integrand::PlainGradient => "plain_gradient",
            Integrand::ActivationGradientProduct => "activation_gradient_product",
            Integrand::GradientRollout(RolloutCombine::Product) => "gradient_rollout",
            Integrand::GradientRollout(RolloutCombine::Sum) => "gradient_rollout_sum",
            Integrand::AttentionRollout(RolloutCombine::Product) => "attention_rollout",
            Integrand::AttentionRollout(RolloutCombine::Sum) => "attention_rollout_sum",
        }
    }

    /// Rollout integrands consume attention stacks and only fit transformers.
    pub fn needs_attentions(&self) -> bool {
        matches!(
            self,
            Integrand::GradientRollout(_) | Integrand::AttentionRollout(_)
        )
    }
}

/// Gradient of the class score w.r.t. the used representation, unchanged.
pub fn plain_gradient(v: &ArrayD<f64>, grad: &ArrayD<f64>) -> Result<ArrayD<f64>> {
    if v.shape() != grad.shape() {
        return Err(AttributionError::shape(
            "plain_gradient",
            v.shape(),
            grad.shape(),
        ));
    }
    Ok(grad.clone())
}

/// Elementwise product of the used representation and its gradient.
pub fn activation_gradient_product(v: &ArrayD<f64>, grad: &ArrayD<f64>) -> Result<ArrayD<f64>> {
    if v.shape() != grad.shape() {
        return Err(AttributionError::shape(
            "activation_gradient_product",
            v.shape(),
            grad.shape(),
        ));
    }
    Ok(v * grad)
}

/// Per-block attention stacks and matching gradient stacks, block 1 first.
/// Each entry is (heads, tokens, tokens).
#[derive(Debug, Clone)]
pub struct RolloutState {
    pub attentions: Vec<Array3<f64>>,
    pub gradients: Vec<Array3<f64>>,
}

impl RolloutState {
    fn validate(&self, with_gradients: bool) -> Result<usize> {
        if self.attentions.is_empty() {
            return Err(AttributionError::InvalidArgument(
                "rollout needs at least one block".into(),
            ));
        }
        let tokens = self.attentions[0].dim().1;
        for (i, a) in self.attentions.iter().enumerate() {
            let (_, t, t2) = a.dim();
            if t != tokens || t2 != tokens {
                return Err(AttributionError::InvalidArgument(format!(
                    "block {} has {}x{} attention, expected {tokens}x{tokens}",
                    i + 1,
                    t,
                    t2
                )));
            }
        }
        if with_gradients {
            if self.gradients.len() != self.attentions.len() {
                return Err(AttributionError::InvalidArgument(format!(
                    "{} gradient stacks for {} attention stacks",
                    self.gradients.len(),
                    self.attentions.len()
                )));
            }
            for (i, (a, g)) in self.attentions.iter().zip(&self.gradients).enumerate() {
                if a.dim() != g.dim() {
                    return Err(AttributionError::InvalidArgument(format!(
                        "block {} attention and gradient shapes differ",
                        i + 1
                    )));
                }
            }
        }
        Ok(tokens)
    }
}

fn combine_blocks(per_block: Vec<Array2<f64>>, combine: RolloutCombine) -> Array2<f64> {
    let mut iter = per_block.into_iter();
    let first = iter.next().expect("validated nonempty");
    match combine {
        RolloutCombine::Product => iter.fold(first, |acc, m| acc.dot(&m)),
        RolloutCombine::Sum => iter.fold(first, |acc, m| acc + m),
    }
}

/// Gradient Rollout: per block, identity plus the head-mean of the Hadamard
/// product of attention and gradient; blocks combined left-to-right.
pub fn gradient_rollout(state: &RolloutState, combine: RolloutCombine) -> Result<Array2<f64>> {
    let tokens = state.validate(true)?;
    let per_block = state
        .attentions
        .iter()
        .zip(&state.gradients)
        .map(|(a, g)| augmented_block(&(a * g), tokens))
        .collect();
    Ok(combine_blocks(per_block, combine))
}

/// Attention Rollout: Gradient Rollout with every gradient replaced by ones.
pub fn attention_rollout(state: &RolloutState, combine: RolloutCombine) -> Result<Array2<f64>> {
    let tokens = state.validate(false)?;
    let per_block = state
        .attentions
        .iter()
        .map(|a| augmented_block(a, tokens))
        .collect();
    Ok(combine_blocks(per_block, combine))
}

/// Identity plus the mean over heads of a (heads, tokens, tokens) stack.
fn augmented_block(stack: &Array3<f64>, tokens: usize) -> Array2<f64> {
    let heads = stack.dim().0;
    let mut mean = Array2::<f64>::zeros((tokens, tokens));
    for h in 0..heads {
        mean += &stack.index_axis(ndarray::Axis(0), h);
    }
    mean.mapv_inplace(|x| x / heads as f64);
    for i in 0..tokens {
        mean[(i, i)] += 1.0;
    }
    mean
}

/// Extract the class token's attention row, drop the class-token column,
/// and reshape row-major onto the patch grid.
pub fn cls_row_to_patch_map(
    rollout: &Array2<f64>,
    grid_h: usize,
    grid_w: usize,
) -> Result<Array2<f64>> {
    let (rows, cols) = rollout.dim();
    let expect = 1 + grid_h * grid_w;
    if rows != expect || cols != expect {
        return Err(AttributionError::InvalidArgument(format!(
            "rollout is {rows}x{cols}, expected {expect}x{expect} for a {grid_h}x{grid_w} grid"
        )));
    }
    let mut map = Array2::<f64>::zeros((grid_h, grid_w));
    for idx in 0..grid_h * grid_w {
        map[(idx / grid_w, idx % grid_w)] = rollout[(0, idx + 1)];
    }
    Ok(map)
}
