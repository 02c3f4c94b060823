//! Interpolation plans: which layer representations get interpolated, how
//! finely, and what running the resulting grid costs.
//!
//! A plan owns the indicator vector `b` (index 0 is the input, index j is
//! layer j's tap), the per-layer step count `n`, and the target layer `l`
//! whose representation the integrand is evaluated against. The grid it
//! induces is the Cartesian product, over active indices `j <= l` with
//! `b[j] = 1`, of the coefficients `{1/n, 2/n, ..., 1}`.

use std::collections::HashMap;
use std::fmt;

use crate::error::{AttributionError, Result};

/// How the explained class is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassSelector {
    /// A fixed class index, typically the ground-truth label.
    Target(usize),
    /// The argmax of the clean (uninterpolated) forward pass, resolved once
    /// before any interpolation and held constant across the grid.
    Predicted,
}

impl fmt::Display for ClassSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassSelector::Target(c) => write!(f, "target({c})"),
            ClassSelector::Predicted => write!(f, "predicted"),
        }
    }
}

/// The five named plan presets surfaced by the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Interpolate input and last layer; integrand at the last layer.
    Iia2,
    /// Interpolate input, penultimate, and last layer; integrand at the last.
    Iia3,
    /// Interpolate the input only; integrand at the last layer.
    Img,
    /// Interpolate the last layer only; integrand there.
    Act,
    /// Interpolate input and penultimate layer; integrand at the penultimate.
    Iia2Lm1,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Iia2 => "iia2",
            Preset::Iia3 => "iia3",
            Preset::Img => "img",
            Preset::Act => "act",
            Preset::Iia2Lm1 => "iia2_lm1",
        }
    }
}

pub const DEFAULT_STEPS: usize = 10;

/// The interpolation layout for one attribution run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterpolationPlan {
    /// Indicator bits, length L+1; index 0 switches input interpolation.
    pub b: Vec<u8>,
    /// Interpolation steps per active layer.
    pub n: usize,
    /// Layer the integrand is computed at.
    pub l: usize,
    pub class_selector: ClassSelector,
}

impl InterpolationPlan {
    pub fn new(b: Vec<u8>, n: usize, l: usize, class_selector: ClassSelector) -> Result<Self> {
        let plan = InterpolationPlan {
            b,
            n,
            l,
            class_selector,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Build one of the named presets for a model with `layer_count` taps.
    pub fn preset(
        preset: Preset,
        layer_count: usize,
        class_selector: ClassSelector,
    ) -> Result<Self> {
        if layer_count == 0 {
            return Err(AttributionError::Plan(
                "presets need at least one tappable layer".into(),
            ));
        }
        let last = layer_count;
        let mut b = vec![0u8; layer_count + 1];
        let l = match preset {
            Preset::Iia2 => {
                b[0] = 1;
                b[last] = 1;
                last
            }
            Preset::Iia3 => {
                if layer_count < 2 {
                    return Err(AttributionError::Plan(
                        "iia3 needs a penultimate layer".into(),
                    ));
                }
                b[0] = 1;
                b[last - 1] = 1;
                b[last] = 1;
                last
            }
            Preset::Img => {
                b[0] = 1;
                last
            }
            Preset::Act => {
                b[last] = 1;
                last
            }
            Preset::Iia2Lm1 => {
                if layer_count < 2 {
                    return Err(AttributionError::Plan(
                        "iia2_lm1 needs a penultimate layer".into(),
                    ));
                }
                b[0] = 1;
                b[last - 1] = 1;
                last - 1
            }
        };
        InterpolationPlan::new(b, DEFAULT_STEPS, l, class_selector)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b.is_empty() {
            return Err(AttributionError::Plan("empty indicator vector".into()));
        }
        if let Some(bad) = self.b.iter().find(|&&bit| bit > 1) {
            return Err(AttributionError::Plan(format!(
                "indicator entries must be 0 or 1, found {bad}"
            )));
        }
        if self.n == 0 {
            return Err(AttributionError::Plan("step count must be positive".into()));
        }
        if self.l >= self.b.len() {
            return Err(AttributionError::Plan(format!(
                "target layer {} out of range for {} indicator bits",
                self.l,
                self.b.len()
            )));
        }
        Ok(())
    }

    /// Indices `j <= l` with `b[j] = 1`, ascending.
    pub fn active_layers(&self) -> Vec<usize> {
        (0..=self.l).filter(|&j| self.b[j] == 1).collect()
    }

    /// Number of effectively interpolated layers.
    pub fn beta(&self) -> usize {
        self.active_layers().len()
    }

    /// Total grid cardinality n^beta.
    pub fn grid_len(&self) -> u128 {
        let mut total: u128 = 1;
        for _ in 0..self.beta() {
            total = total.saturating_mul(self.n as u128);
        }
        total
    }

    /// Compact human-readable tag, used as map provenance.
    pub fn describe(&self, integrand: &str) -> String {
        let bits: String = self.b.iter().map(|bit| char::from(b'0' + bit)).collect();
        format!("iia[b={bits},n={},l={},{integrand}]", self.n, self.l)
    }
}

/// One grid point: the interpolation coefficient for each layer index
/// `0..=l`, with `None` marking layers the plan leaves untouched.
pub type CoefficientTuple = Vec<Option<f64>>;

/// Iterator over the full interpolation grid in lexicographic order, the
/// last active layer's coefficient varying fastest.
pub struct GridIter {
    active: Vec<usize>,
    tuple_len: usize,
    n: usize,
    /// Counter digits, one per active layer, each in 1..=n; empty means the
    /// single empty tuple has not been emitted yet.
    digits: Vec<usize>,
    done: bool,
}

impl GridIter {
    pub fn remaining_hint(&self) -> u128 {
        if self.done {
            return 0;
        }
        let mut total: u128 = 1;
        for _ in &self.active {
            total = total.saturating_mul(self.n as u128);
        }
        total
    }
}

impl Iterator for GridIter {
    type Item = CoefficientTuple;

    fn next(&mut self) -> Option<CoefficientTuple> {
        if self.done {
            return None;
        }
        let mut tuple = vec![None; self.tuple_len];
        for (pos, &layer) in self.active.iter().enumerate() {
            tuple[layer] = Some(self.digits[pos] as f64 / self.n as f64);
        }
        // Advance the mixed-radix counter, last digit fastest.
        let mut pos = self.active.len();
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            if self.digits[pos] < self.n {
                self.digits[pos] += 1;
                break;
            }
            self.digits[pos] = 1;
        }
        Some(tuple)
    }
}

/// Enumerate the Cartesian product of coefficients over the plan's active
/// layers. A plan with no active layers yields exactly one all-`None` tuple.
pub fn enumerate_interpolation_grid(plan: &InterpolationPlan) -> GridIter {
    let active = plan.active_layers();
    GridIter {
        digits: vec![1; active.len()],
        active,
        tuple_len: plan.l + 1,
        n: plan.n,
        done: false,
    }
}

/// Grid points grouped into execution chunks of at most `max_batch`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSchedule {
    /// Chunk sizes in execution order; they sum to the grid cardinality.
    pub sizes: Vec<usize>,
    pub max_batch: usize,
}

impl BatchSchedule {
    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }
}

/// Split the n^beta grid points into consecutive chunks of at most
/// `max_batch` points. Chunking only affects when partial sums are folded
/// into the accumulator, so any chunking stays within floating-point
/// reduction-order distance of sequential execution.
pub fn schedule_batches(plan: &InterpolationPlan, max_batch: usize) -> Result<BatchSchedule> {
    if max_batch == 0 {
        return Err(AttributionError::InvalidArgument(
            "max_batch must be at least 1".into(),
        ));
    }
    let total128 = plan.grid_len();
    let total = usize::try_from(total128).map_err(|_| {
        AttributionError::Plan(format!("grid of {total128} points is too large to schedule"))
    })?;
    let mut sizes = Vec::with_capacity(total / max_batch + 1);
    let mut left = total;
    while left > 0 {
        let take = left.min(max_batch);
        sizes.push(take);
        left -= take;
    }
    Ok(BatchSchedule { sizes, max_batch })
}

/// Destination of a propagation segment in the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CostTarget {
    Layer(usize),
    /// The classification head.
    Head,
}

/// Per-segment propagation costs `c_{i,j}`, keyed by (from-layer, target).
#[derive(Debug, Clone, Default)]
pub struct SegmentCosts {
    table: HashMap<(usize, CostTarget), f64>,
    fallback: Option<f64>,
}

impl SegmentCosts {
    pub fn new() -> Self {
        SegmentCosts::default()
    }

    /// A table answering every segment with the same cost.
    pub fn constant(cost: f64) -> Self {
        SegmentCosts {
            table: HashMap::new(),
            fallback: Some(cost),
        }
    }

    pub fn insert(&mut self, from: usize, to: CostTarget, cost: f64) -> &mut Self {
        self.table.insert((from, to), cost);
        self
    }

    fn get(&self, from: usize, to: CostTarget) -> Result<f64> {
        if let Some(&c) = self.table.get(&(from, to)) {
            return Ok(c);
        }
        self.fallback.ok_or_else(|| {
            let dst = match to {
                CostTarget::Layer(j) => j.to_string(),
                CostTarget::Head => "head".to_string(),
            };
            AttributionError::MissingCost(format!("({from} -> {dst})"))
        })
    }
}

/// Predicted runtime of executing the plan with batch capacity `max_batch`:
/// the sum over consecutive active-layer segments of (grid points reaching
/// that segment / batch) times the segment cost, plus the final
/// propagation from the deepest active layer through the head.
pub fn estimate_cost(
    plan: &InterpolationPlan,
    costs: &SegmentCosts,
    max_batch: usize,
) -> Result<f64> {
    plan.validate()?;
    if max_batch == 0 {
        return Err(AttributionError::InvalidArgument(
            "max_batch must be at least 1".into(),
        ));
    }
    let active = plan.active_layers();
    let b = max_batch as f64;
    let n = plan.n as f64;
    let mut from = 0usize;
    let mut reach = 1.0; // n^m for the m-th segment
    let mut total = 0.0;
    for &layer in &active {
        reach *= n;
        total += reach / b * costs.get(from, CostTarget::Layer(layer))?;
        from = layer;
    }
    total += reach / b * costs.get(from, CostTarget::Head)?;
    Ok(total)
}
