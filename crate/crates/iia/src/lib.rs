//! Layered path attribution for instrumented vision models.
//!
//! The core of the crate is [`attribution::iterated_attribution`]: a nested
//! integration engine that interpolates tensors at several depths of a
//! network at once — the input, intermediate activations, attention maps —
//! and accumulates gradient-based integrand terms over the resulting grid.
//! Around it sit the classic single-path baselines
//! ([`baselines`]), faithfulness and localization metrics ([`metrics`]),
//! parameter-randomization sanity checks ([`sanity`]), and dataset /
//! archive plumbing ([`io`]).

#![deny(unsafe_code)]

pub mod attribution;
pub mod baselines;
pub mod error;
pub mod integrands;
pub mod io;
pub mod metrics;
pub mod plan;
pub mod resize;
pub mod sanity;
mod tensor;

pub use attribution::{
    interpolate, iterated_attribution, reduce_to_map, AttributionMap, ReferencePlan,
    ReferencePolicy,
};
pub use baselines::{
    attention_rollout_map, grad_cam, integrated_gradients, PixelAttribution,
};
pub use error::{AttributionError, Result};
pub use integrands::{Integrand, RolloutCombine};
pub use plan::{
    estimate_cost, schedule_batches, ClassSelector, CostTarget, InterpolationPlan, Preset,
    SegmentCosts, DEFAULT_STEPS,
};
pub use resize::bilinear_resize;
